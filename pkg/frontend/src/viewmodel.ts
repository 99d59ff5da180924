/**
 * Cockpit view model: the fold from server frames to everything the
 * renderer shows.
 *
 * Invariant: every displayed number is copied from a frame. The client
 * keeps no physics of its own; when no state frame has arrived yet the
 * gauges read zero and say so.
 */

import {
  ErrorFrame,
  HelloFrame,
  ServerFrame,
  StateFrame,
  SummaryFrame,
} from "./protocol.js";

/** Torque bars saturate at this display range; the value text does not. */
export const TORQUE_DISPLAY_RANGE = 6.0;
/** Guidance torque is capped here by the server; the bar marks it. */
export const GUIDANCE_CAP = 5.0;

export type ConnectionStatus = "connecting" | "online" | "disconnected";

export interface TorqueBar {
  value: number;     // exact frame value, shown as text
  fraction: number;  // signed bar extent in [-1, 1], clamped at the range
  clamped: boolean;
}

export function torqueBar(value: number): TorqueBar {
  const limited = Math.max(-TORQUE_DISPLAY_RANGE,
    Math.min(TORQUE_DISPLAY_RANGE, value));
  return {
    value,
    fraction: limited / TORQUE_DISPLAY_RANGE,
    clamped: limited !== value,
  };
}

export class CockpitViewModel {
  hello: HelloFrame | null = null;
  state: StateFrame | null = null;
  summary: SummaryFrame | null = null;
  status: ConnectionStatus = "connecting";
  notice: string | null = null;      // transient server error text
  fatalError: string | null = null;  // blocks the session until reload
  /** Digest the session must keep; seeded by the first hello. */
  private expectedConfig: string | null;

  constructor(expectedConfig: string | null = null) {
    this.expectedConfig = expectedConfig;
  }

  apply(frame: ServerFrame): void {
    switch (frame.type) {
      case "hello":
        this.applyHello(frame);
        break;
      case "state":
        this.state = frame;
        if (frame.phase === "running") this.summary = null;
        break;
      case "summary":
        this.applySummary(frame);
        break;
      case "error":
        this.applyError(frame);
        break;
    }
  }

  private applyHello(frame: HelloFrame): void {
    if (this.expectedConfig !== null
        && frame.config !== this.expectedConfig) {
      this.fatalError = "configuration mismatch: the server is not running "
        + "the session this cockpit was opened for";
      return;
    }
    this.expectedConfig = frame.config;
    this.hello = frame;
    this.notice = null;
  }

  private applySummary(frame: SummaryFrame): void {
    this.summary = frame;
    if (this.hello !== null) {
      this.hello = { ...this.hello, phase: "finished" };
    }
  }

  private applyError(frame: ErrorFrame): void {
    this.notice = frame.message;
  }

  get phase(): string {
    if (this.state !== null && this.summary === null) return this.state.phase;
    if (this.summary !== null) return "finished";
    return this.hello !== null ? this.hello.phase : "connecting";
  }

  /** Authority gain K straight from the last state frame. */
  authorityGauge(): number {
    return this.state !== null ? this.state.authority : 0;
  }

  activation(): number {
    return this.state !== null ? this.state.r : 0;
  }

  gripLevel(): number {
    return this.state !== null ? this.state.grip : 0;
  }

  driverBar(): TorqueBar {
    return torqueBar(this.state !== null ? this.state.torque_driver : 0);
  }

  hapticBar(): TorqueBar {
    return torqueBar(this.state !== null ? this.state.torque_haptic : 0);
  }

  modeLabel(id: string): string {
    const option = this.hello?.modes.find((m) => m.id === id);
    return option !== undefined ? option.label : id;
  }

  /** Rows for the end-of-trial panel; empty until a summary arrives. */
  metricsRows(): Array<[string, string]> {
    if (this.summary === null) return [];
    const rows: Array<[string, string]> = [
      ["condition", this.summary.condition],
      ["end", this.summary.end_reason],
      ["sim time", `${this.summary.sim_time.toFixed(2)} s`],
    ];
    if (this.summary.metrics === null) {
      rows.push(["measures", "not available for this run"]);
      return rows;
    }
    for (const [name, value] of Object.entries(this.summary.metrics)) {
      rows.push([name, typeof value === "number"
        ? value.toFixed(4) : String(value)]);
    }
    return rows;
  }
}
