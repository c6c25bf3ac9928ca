import { ApiClient } from "./api";
import { renderView } from "./render";
import { ConsolePoller, POLL_INTERVAL_MS } from "./state";

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  if (override) return override.replace(/\/$/, "");
  return "http://127.0.0.1:8734";
}

const api = new ApiClient(apiBase());
const poller = new ConsolePoller(api);

async function tick(): Promise<void> {
  await poller.poll();
  renderView(poller.view, poller.stale);
  window.setTimeout(tick, poller.nextDelayMs(POLL_INTERVAL_MS));
}

window.addEventListener("DOMContentLoaded", () => {
  const form = document.getElementById("steer-form") as HTMLFormElement;
  const input = document.getElementById("steer-text") as HTMLInputElement;
  const feedback = document.getElementById("steer-feedback") as HTMLElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    api
      .submitSteering(input.value)
      .then(({ file }) => {
        feedback.textContent = `queued ${file}`;
        input.value = "";
        return poller.poll().then(() => renderView(poller.view, poller.stale));
      })
      .catch((err) => {
        feedback.textContent = String(err instanceof Error ? err.message : err);
      });
  });
  void tick();
});
