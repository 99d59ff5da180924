/**
 * Session socket wrapper: connect, parse, resume.
 *
 * The browser WebSocket is injected as a factory so tests can drive the
 * controller with a scripted fake. On a drop the controller keeps the
 * session id from the hello frame and reconnects with ?resume=<id>; the
 * server holds a paused trial for a grace period.
 */

import { InputMessage, ServerFrame, parseServerFrame } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionSocketHandlers {
  onFrame: (frame: ServerFrame) => void;
  onStatus: (online: boolean) => void;
  /** A message that did not parse; the connection stays up. */
  onBadFrame?: (reason: string) => void;
}

export class SessionSocket {
  private socket: SocketLike | null = null;
  private sessionId: string | null = null;
  private readonly baseUrl: string;
  private readonly makeSocket: SocketFactory;
  private readonly handlers: SessionSocketHandlers;

  constructor(baseUrl: string, handlers: SessionSocketHandlers,
      makeSocket: SocketFactory) {
    this.baseUrl = baseUrl;
    this.handlers = handlers;
    this.makeSocket = makeSocket;
  }

  connect(): void {
    const url = this.sessionId === null
      ? this.baseUrl
      : `${this.baseUrl}?resume=${encodeURIComponent(this.sessionId)}`;
    const socket = this.makeSocket(url);
    this.socket = socket;
    socket.onopen = () => this.handlers.onStatus(true);
    socket.onclose = () => {
      if (this.socket === socket) {
        this.socket = null;
        this.handlers.onStatus(false);
      }
    };
    socket.onmessage = (event) => {
      let frame: ServerFrame;
      try {
        frame = parseServerFrame(event.data);
      } catch (err) {
        this.handlers.onBadFrame?.(String(err));
        return;
      }
      if (frame.type === "hello") {
        this.sessionId = frame.session;
      }
      this.handlers.onFrame(frame);
    };
  }

  get connected(): boolean {
    return this.socket !== null;
  }

  get resumeId(): string | null {
    return this.sessionId;
  }

  send(message: InputMessage): boolean {
    if (this.socket === null) return false;
    this.socket.send(JSON.stringify(message));
    return true;
  }

  close(): void {
    const socket = this.socket;
    this.socket = null;
    socket?.close();
  }
}
