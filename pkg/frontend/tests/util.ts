import { readFileSync } from "node:fs";

import { GatewayEvent } from "../src/types.js";

export function loadFixtureEvents(): GatewayEvent[] {
  const url = new URL("../../fixtures/recorded_events.json", import.meta.url);
  return JSON.parse(readFileSync(url, "utf-8")) as GatewayEvent[];
}

export function makeEvent(
  seq: number,
  kind: string,
  t_ms: number,
  payload: Record<string, unknown> = {},
): GatewayEvent {
  return { seq, kind, t_ms, payload };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs: number,
  label: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await sleep(10);
  }
  throw new Error(`timed out waiting for ${label}`);
}
