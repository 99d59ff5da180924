/**
 * Wire schema for the steering session server.
 *
 * One JSON object per WebSocket message, discriminated by `type`. The
 * client never computes physics: every displayed number comes out of a
 * frame defined here.
 */

export interface ModeOption {
  id: string;     // wire identifier, e.g. "hg-decrease"
  label: string;  // display label, e.g. "HG-Decrease"
}

export interface TrackGeometry {
  lane_width: number;
  total_length: number;
  section_stations: number[];
  cones: Array<[number, number]>;
  centerline: Array<[number, number]>;
}

export interface HelloFrame {
  type: "hello";
  session: string;
  config: string;       // configuration digest; must match across reconnects
  subject: number;
  mode: string;
  phase: string;        // "lobby" | "running" | "finished"
  broadcast_hz: number;
  modes: ModeOption[];
  track: TrackGeometry;
}

export interface StateFrame {
  type: "state";
  phase: string;
  t: number;
  x: number;
  y: number;
  psi: number;
  phi_deg: number;
  torque_driver: number;
  torque_haptic: number;
  authority: number;    // K in [0, 1], straight from the server
  r: number;            // normalized activation
  e_y_near: number;
  e_th_far: number;
  lane_offset: number;
  grip: number;
  station: number;
  step: number;
}

export interface SummaryFrame {
  type: "summary";
  session_index: number;
  condition: string;
  aborted: boolean;
  end_reason: string;
  steps: number;
  sim_time: number;
  metrics: Record<string, number | boolean> | null;
}

export interface ErrorFrame {
  type: "error";
  message: string;
}

export type ServerFrame = HelloFrame | StateFrame | SummaryFrame | ErrorFrame;

export interface KeyFlags {
  left?: boolean;
  right?: boolean;
  grip?: boolean;
}

/** Client -> server. All fields optional; commands hold until changed. */
export interface InputMessage {
  type: "input";
  torque?: number;  // direct steering torque command, N m
  grip?: number;    // direct grip level
  keys?: KeyFlags;  // server-side ramp: +-4 N m/s capped at 6; grip 0->1 in 1 s
  mode?: string;
  start?: boolean;
  reset?: boolean;
}

/** Hard limits the server enforces on direct commands. */
export const TORQUE_COMMAND_LIMIT = 15.0;
export const GRIP_COMMAND_LIMIT = 1.2;

// ---------------------------------------------------------------- parsing

const STATE_NUMBER_FIELDS: Array<keyof StateFrame> = [
  "t", "x", "y", "psi", "phi_deg", "torque_driver", "torque_haptic",
  "authority", "r", "e_y_near", "e_th_far", "lane_offset", "grip",
  "station", "step",
];

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function isPointList(v: unknown): v is Array<[number, number]> {
  return Array.isArray(v) && v.every(
    (p) => Array.isArray(p) && p.length === 2
      && isFiniteNumber(p[0]) && isFiniteNumber(p[1]));
}

function parseHello(raw: Record<string, unknown>): HelloFrame {
  const track = raw.track;
  if (typeof raw.session !== "string" || typeof raw.config !== "string"
      || typeof raw.phase !== "string" || typeof raw.mode !== "string"
      || !isFiniteNumber(raw.subject) || !isFiniteNumber(raw.broadcast_hz)
      || !isRecord(track)) {
    throw new Error("malformed hello frame");
  }
  if (!Array.isArray(raw.modes) || raw.modes.length === 0
      || !raw.modes.every((m) => isRecord(m)
        && typeof m.id === "string" && typeof m.label === "string")) {
    throw new Error("hello frame without a mode list");
  }
  if (!isFiniteNumber(track.lane_width) || !isFiniteNumber(track.total_length)
      || !Array.isArray(track.section_stations)
      || !track.section_stations.every(isFiniteNumber)
      || !isPointList(track.cones) || !isPointList(track.centerline)) {
    throw new Error("hello frame with malformed track geometry");
  }
  return raw as unknown as HelloFrame;
}

function parseState(raw: Record<string, unknown>): StateFrame {
  for (const name of STATE_NUMBER_FIELDS) {
    if (!isFiniteNumber(raw[name])) {
      throw new Error(`state frame missing numeric ${name}`);
    }
  }
  if (typeof raw.phase !== "string") {
    throw new Error("state frame missing phase");
  }
  return raw as unknown as StateFrame;
}

function parseSummary(raw: Record<string, unknown>): SummaryFrame {
  if (typeof raw.condition !== "string" || typeof raw.end_reason !== "string"
      || typeof raw.aborted !== "boolean"
      || !isFiniteNumber(raw.session_index) || !isFiniteNumber(raw.steps)
      || !isFiniteNumber(raw.sim_time)) {
    throw new Error("malformed summary frame");
  }
  if (raw.metrics !== null && !isRecord(raw.metrics)) {
    throw new Error("summary metrics must be an object or null");
  }
  return raw as unknown as SummaryFrame;
}

/** Parse and validate one server message; throws on anything off-schema. */
export function parseServerFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new Error("server message is not JSON");
  }
  if (!isRecord(raw)) {
    throw new Error("server message is not an object");
  }
  switch (raw.type) {
    case "hello":
      return parseHello(raw);
    case "state":
      return parseState(raw);
    case "summary":
      return parseSummary(raw);
    case "error":
      if (typeof raw.message !== "string") {
        throw new Error("error frame without message");
      }
      return raw as unknown as ErrorFrame;
    default:
      throw new Error(`unknown frame type ${String(raw.type)}`);
  }
}
