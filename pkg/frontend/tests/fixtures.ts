import { readFileSync } from "node:fs";

import type {
  HelloFrame,
  StateFrame,
  SummaryFrame,
} from "../src/protocol.js";

export interface SessionStream {
  hello: HelloFrame;
  states: StateFrame[];
  summary: SummaryFrame;
}

/** One short trial recorded from the real server implementation. */
export function loadSessionStream(): SessionStream {
  const url = new URL("./fixtures/session_stream.json", import.meta.url);
  return JSON.parse(readFileSync(url, "utf8")) as SessionStream;
}
