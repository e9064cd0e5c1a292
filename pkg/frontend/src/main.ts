// Entry point: ?gateway=<url>&session=<id> selects the session; with only a
// scenario name given, a fresh session is created first.

import { ConsoleApp } from "./app.js";
import { createSession } from "./client.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const gateway = params.get("gateway") ?? "http://127.0.0.1:8080";
  let session = params.get("session");
  const scenario = params.get("scenario");
  if (!session && scenario) {
    session = await createSession(gateway, scenario);
  }
  const root = document.getElementById("app");
  if (!root || !session) {
    document.body.textContent =
      "usage: ?gateway=http://host:port&session=<id> (or &scenario=<name>)";
    return;
  }
  const app = new ConsoleApp(root, gateway, session);
  app.start();
}

void boot();
