import { describe, expect, it } from "vitest";

import { parseServerFrame } from "../src/protocol.js";
import { loadSessionStream } from "./fixtures.js";

const stream = loadSessionStream();

describe("parseServerFrame", () => {
  it("accepts every frame of a recorded session", () => {
    const hello = parseServerFrame(JSON.stringify(stream.hello));
    expect(hello.type).toBe("hello");
    for (const state of stream.states) {
      const parsed = parseServerFrame(JSON.stringify(state));
      expect(parsed.type).toBe("state");
    }
    const summary = parseServerFrame(JSON.stringify(stream.summary));
    expect(summary.type).toBe("summary");
  });

  it("keeps hello geometry intact", () => {
    const hello = parseServerFrame(JSON.stringify(stream.hello));
    if (hello.type !== "hello") throw new Error("wrong type");
    expect(hello.modes.length).toBe(5);
    expect(hello.track.cones.length).toBeGreaterThan(0);
    expect(hello.track.centerline.length).toBeGreaterThan(100);
    expect(hello.config).toBe(stream.hello.config);
  });

  it("rejects non-JSON and non-objects", () => {
    expect(() => parseServerFrame("not json")).toThrow(/not JSON/);
    expect(() => parseServerFrame("[1,2]")).toThrow(/not an object/);
    expect(() => parseServerFrame("42")).toThrow(/not an object/);
  });

  it("rejects unknown frame types", () => {
    expect(() => parseServerFrame('{"type":"telemetry"}'))
      .toThrow(/unknown frame type/);
  });

  it("rejects state frames with missing or bad numerics", () => {
    const good = { ...stream.states[0] };
    const noTorque: Record<string, unknown> = { ...good };
    delete noTorque.torque_haptic;
    expect(() => parseServerFrame(JSON.stringify(noTorque)))
      .toThrow(/torque_haptic/);
    // JSON turns NaN into null on the way in; null is not a number
    const nulled = { ...good, authority: null };
    expect(() => parseServerFrame(JSON.stringify(nulled)))
      .toThrow(/authority/);
    const stringy = { ...good, t: "0.5" };
    expect(() => parseServerFrame(JSON.stringify(stringy)))
      .toThrow(/numeric t/);
  });

  it("rejects a hello without modes or with broken geometry", () => {
    const noModes = { ...stream.hello, modes: [] };
    expect(() => parseServerFrame(JSON.stringify(noModes)))
      .toThrow(/mode list/);
    const badTrack = {
      ...stream.hello,
      track: { ...stream.hello.track, cones: [[1]] },
    };
    expect(() => parseServerFrame(JSON.stringify(badTrack)))
      .toThrow(/track geometry/);
  });

  it("rejects malformed summary and error frames", () => {
    const badMetrics = { ...stream.summary, metrics: 7 };
    expect(() => parseServerFrame(JSON.stringify(badMetrics)))
      .toThrow(/metrics/);
    expect(() => parseServerFrame('{"type":"error"}'))
      .toThrow(/error frame/);
  });
});
