/** Browser entry point: wires window.fetch into the app.
 *
 * The API origin defaults to the page's own, and can be pointed elsewhere
 * with ?api=http://host:port for local development against `triageflow
 * serve`.
 */

import { TriageApi, TriageChatApp } from "./app.js";
import type { HttpClient } from "./api.js";

function fetchClient(baseUrl: string): HttpClient {
  return async (path, init) => {
    const request: RequestInit = { method: init?.method ?? "GET" };
    if (init?.headers !== undefined) request.headers = init.headers;
    if (init?.body !== undefined) request.body = init.body;
    const response = await fetch(baseUrl + path, request);
    return {
      status: response.status,
      json: () => response.json(),
      text: () => response.text(),
    };
  };
}

function main(): void {
  const root = document.getElementById("root");
  if (root === null) throw new Error("missing #root element");
  const base = new URLSearchParams(window.location.search).get("api") ?? "";
  const app = new TriageChatApp(root, new TriageApi(fetchClient(base)));
  void app.boot();
}

main();
