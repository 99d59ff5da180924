/**
 * Driver input: keyboard flags and gamepad axes folded into input
 * messages.
 *
 * Keys are sent as flags and ramped server-side (so the torque that is
 * applied is exactly the documented ramp, whatever the client frame
 * rate). Gamepad axes pass analog values directly as held commands.
 * The sampler emits a message only when the payload changes; the server
 * holds the last command, so repeats carry no information.
 */

import {
  GRIP_COMMAND_LIMIT,
  InputMessage,
  KeyFlags,
} from "./protocol.js";

// Full stick deflection commands the same 6 N m the key ramp saturates
// at, so both input paths top out at the same authority over the wheel.
export const STICK_TORQUE_RANGE = 6.0;
export const STICK_DEADZONE = 0.08;

const KEY_BINDINGS: Record<string, keyof KeyFlags> = {
  ArrowLeft: "left",
  KeyA: "left",
  ArrowRight: "right",
  KeyD: "right",
  Space: "grip",
  KeyG: "grip",
};

export class KeyboardState {
  private readonly down = new Set<keyof KeyFlags>();

  /** Returns true when the code is one of ours (caller preventDefaults). */
  keyDown(code: string): boolean {
    const flag = KEY_BINDINGS[code];
    if (flag === undefined) return false;
    this.down.add(flag);
    return true;
  }

  keyUp(code: string): boolean {
    const flag = KEY_BINDINGS[code];
    if (flag === undefined) return false;
    this.down.delete(flag);
    return true;
  }

  /** e.g. on window blur: every key reads as released. */
  clear(): void {
    this.down.clear();
  }

  flags(): Required<KeyFlags> {
    return {
      left: this.down.has("left"),
      right: this.down.has("right"),
      grip: this.down.has("grip"),
    };
  }

  attach(target: Window): void {
    target.addEventListener("keydown", (e) => {
      if (this.keyDown(e.code)) e.preventDefault();
    });
    target.addEventListener("keyup", (e) => {
      if (this.keyUp(e.code)) e.preventDefault();
    });
    target.addEventListener("blur", () => this.clear());
  }
}

export interface StickSample {
  steer: number;    // [-1, 1], positive right
  gripHold: number; // [0, 1]
}

/** Map raw gamepad axes to a sample; null when no pad is connected. */
export function readGamepad(pads: Array<Gamepad | null>): StickSample | null {
  const pad = pads.find((p) => p !== null && p.connected);
  if (!pad) return null;
  const steerAxis = pad.axes.length > 0 ? pad.axes[0] : 0;
  const steer = Math.abs(steerAxis) < STICK_DEADZONE ? 0 : steerAxis;
  // prefer an analog trigger for grip, fall back to the first face button
  const trigger = pad.buttons.length > 6 ? pad.buttons[6] : pad.buttons[0];
  const gripHold = trigger ? trigger.value : 0;
  return {
    steer: Math.max(-1, Math.min(1, steer)),
    gripHold: Math.max(0, Math.min(1, gripHold)),
  };
}

interface HeldCommand {
  keys: Required<KeyFlags>;
  torque: number | null;
  grip: number | null;
}

function sameCommand(a: HeldCommand, b: HeldCommand): boolean {
  return a.torque === b.torque && a.grip === b.grip
    && a.keys.left === b.keys.left && a.keys.right === b.keys.right
    && a.keys.grip === b.keys.grip;
}

/**
 * Folds the current keyboard flags and stick sample into the next input
 * message, or null when nothing changed since the last emission. The
 * very first sample is always emitted so the held command starts from a
 * known zero.
 */
export class InputSampler {
  private last: HeldCommand | null = null;

  sample(keys: Required<KeyFlags>, stick: StickSample | null):
      InputMessage | null {
    const command: HeldCommand = { keys, torque: null, grip: null };
    if (stick !== null && stick.steer !== 0) {
      // stick steer positive right; positive torque steers left
      command.torque = -stick.steer * STICK_TORQUE_RANGE;
      command.keys = { ...keys, left: false, right: false };
    }
    if (stick !== null && stick.gripHold > 0) {
      command.grip = Math.min(GRIP_COMMAND_LIMIT, stick.gripHold);
      command.keys = { ...command.keys, grip: false };
    }
    if (this.last !== null && sameCommand(command, this.last)) {
      return null;
    }
    this.last = command;
    const msg: InputMessage = { type: "input", keys: command.keys };
    if (command.torque !== null) msg.torque = command.torque;
    if (command.grip !== null) msg.grip = command.grip;
    return msg;
  }

  /** Forget the held state so the next sample re-sends it (reconnects). */
  invalidate(): void {
    this.last = null;
  }
}
