/** Page wiring: one ChatViewModel bound to the static page regions. */

import { HttpApi, type Api } from "./api.js";
import { ChatViewModel } from "./model.js";
import { render } from "./render.js";

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing page element #${id}`);
  return node;
}

export function boot(api: Api = new HttpApi("")): ChatViewModel {
  const model = new ChatViewModel(api);
  const nodes = {
    messages: byId("messages"),
    references: byId("references"),
    trace: byId("trace"),
  };
  const form = byId("composer") as HTMLFormElement;
  const input = byId("composer-input") as HTMLInputElement;
  const sendButton = byId("composer-send") as HTMLButtonElement;
  const traceButton = byId("trace-toggle") as HTMLButtonElement;

  model.onChange(() => {
    render(model, nodes);
    sendButton.disabled = model.pending;
    traceButton.disabled = model.lastTraceId === null;
    if (!model.pending) input.focus();
    nodes.messages.scrollTop = nodes.messages.scrollHeight;
  });

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (model.pending) return;
    const text = input.value;
    input.value = "";
    void model.sendMessage(text);
  });

  nodes.messages.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const chip = target.closest("[data-chip]") as HTMLElement | null;
    if (chip && !model.pending) {
      void model.sendMessage(chip.textContent ?? "");
      return;
    }
    const retry = target.closest("[data-retry]") as HTMLElement | null;
    if (retry && !model.pending) {
      void model.retry(Number(retry.dataset.retry));
    }
  });

  traceButton.addEventListener("click", () => {
    void model.toggleTrace();
  });

  void model.start();
  return model;
}

if (typeof document !== "undefined" && document.getElementById("composer")) {
  boot();
}
