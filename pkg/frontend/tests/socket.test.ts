import { describe, expect, it } from "vitest";

import type { ServerFrame } from "../src/protocol.js";
import { SessionSocket, SocketLike } from "../src/socket.js";
import { loadSessionStream } from "./fixtures.js";

const stream = loadSessionStream();

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.();
  }

  deliver(payload: unknown): void {
    this.onmessage?.({ data: JSON.stringify(payload) });
  }

  drop(): void {
    this.onclose?.();
  }
}

function harness() {
  const sockets: FakeSocket[] = [];
  const urls: string[] = [];
  const frames: ServerFrame[] = [];
  const status: boolean[] = [];
  const bad: string[] = [];
  const socket = new SessionSocket("ws://test/session", {
    onFrame: (f) => frames.push(f),
    onStatus: (s) => status.push(s),
    onBadFrame: (r) => bad.push(r),
  }, (url) => {
    urls.push(url);
    const fake = new FakeSocket();
    sockets.push(fake);
    return fake;
  });
  return { socket, sockets, urls, frames, status, bad };
}

describe("SessionSocket", () => {
  it("connects, reports status, and parses frames", () => {
    const h = harness();
    h.socket.connect();
    expect(h.urls).toEqual(["ws://test/session"]);
    h.sockets[0].open();
    expect(h.status).toEqual([true]);
    h.sockets[0].deliver(stream.hello);
    h.sockets[0].deliver(stream.states[0]);
    expect(h.frames.map((f) => f.type)).toEqual(["hello", "state"]);
    expect(h.socket.resumeId).toBe(stream.hello.session);
  });

  it("reconnects with the resume id after a drop", () => {
    const h = harness();
    h.socket.connect();
    h.sockets[0].open();
    h.sockets[0].deliver(stream.hello);
    h.sockets[0].drop();
    expect(h.status).toEqual([true, false]);
    expect(h.socket.connected).toBe(false);
    h.socket.connect();
    expect(h.urls[1])
      .toBe(`ws://test/session?resume=${stream.hello.session}`);
  });

  it("keeps the connection through an unparseable message", () => {
    const h = harness();
    h.socket.connect();
    h.sockets[0].open();
    h.sockets[0].onmessage?.({ data: "garbage" });
    expect(h.bad.length).toBe(1);
    expect(h.socket.connected).toBe(true);
    h.sockets[0].deliver(stream.hello);
    expect(h.frames.length).toBe(1);
  });

  it("send reports whether a socket was there to take it", () => {
    const h = harness();
    expect(h.socket.send({ type: "input", start: true })).toBe(false);
    h.socket.connect();
    expect(h.socket.send({ type: "input", start: true })).toBe(true);
    expect(JSON.parse(h.sockets[0].sent[0])).toEqual(
      { type: "input", start: true });
  });

  it("close is quiet and idempotent", () => {
    const h = harness();
    h.socket.connect();
    h.socket.close();
    expect(h.sockets[0].closed).toBe(true);
    h.socket.close();
    expect(h.socket.connected).toBe(false);
  });
});
