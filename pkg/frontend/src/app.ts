/** Browser shell: wires the composer form, persona picker, message list,
 * streamed answers, and the per-message trace inspector. */

import { ApiClient } from "./api.js";
import {
  renderExchange,
  renderPersonaOptions,
  renderTracePanel,
} from "./render.js";
import { STYLES } from "./styles.js";

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  return override ?? "";
}

async function wireTraceToggle(
  client: ApiClient,
  exchange: HTMLElement,
  traceId: string,
): Promise<void> {
  const button = exchange.querySelector<HTMLButtonElement>(".trace-toggle");
  const slot = exchange.querySelector<HTMLElement>(".trace-slot");
  if (!button || !slot) {
    return;
  }
  button.addEventListener("click", async () => {
    if (!slot.hidden) {
      slot.hidden = true;
      return;
    }
    if (!slot.innerHTML) {
      try {
        slot.innerHTML = renderTracePanel(await client.trace(traceId));
      } catch (error) {
        slot.innerHTML = `<p class="error-line">${String(error)}</p>`;
      }
    }
    slot.hidden = false;
  });
}

async function submitQuestion(
  client: ApiClient,
  messages: HTMLElement,
  query: string,
  persona: string,
): Promise<void> {
  const response = await client.ask({ query, persona });
  const holder = document.createElement("div");
  holder.innerHTML = renderExchange(query, "", response.status);
  const exchange = holder.firstElementChild as HTMLElement;
  messages.appendChild(exchange);

  const textNode = exchange.querySelector<HTMLElement>(".msg-text");
  if (textNode) {
    try {
      let streamed = "";
      await client.stream(response.trace_id, (chunk) => {
        streamed += chunk;
        textNode.textContent = streamed;
      });
    } catch {
      // stream replay is cosmetic; the full answer is already known
      textNode.textContent = response.answer;
    }
    if (textNode.textContent !== response.answer) {
      textNode.textContent = response.answer;
    }
  }
  await wireTraceToggle(client, exchange, response.trace_id);
  exchange.scrollIntoView({ block: "end" });
}

export async function boot(root: HTMLElement): Promise<void> {
  const client = new ApiClient(apiBase());
  root.innerHTML = `
    <header><h1>hvacqa console</h1></header>
    <div id="messages"></div>
    <form id="composer">
      <select id="persona" aria-label="persona"></select>
      <input id="question" type="text" autocomplete="off"
             placeholder="Ask about the building..." />
      <button type="submit">Ask</button>
    </form>
    <div id="status-line"></div>
  `;
  const messages = root.querySelector<HTMLElement>("#messages")!;
  const form = root.querySelector<HTMLFormElement>("#composer")!;
  const personaSelect = root.querySelector<HTMLSelectElement>("#persona")!;
  const question = root.querySelector<HTMLInputElement>("#question")!;
  const statusLine = root.querySelector<HTMLElement>("#status-line")!;
  const button = form.querySelector<HTMLButtonElement>("button")!;

  try {
    const health = await client.health();
    personaSelect.innerHTML = renderPersonaOptions(health.personas);
    statusLine.textContent = `${health.store_rows} readings · planner: ${health.backends.planner}`;
  } catch (error) {
    statusLine.innerHTML = `<p class="error-line">service unreachable: ${String(error)}</p>`;
  }

  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const query = question.value.trim();
    if (!query) {
      return;
    }
    button.disabled = true;
    try {
      await submitQuestion(client, messages, query, personaSelect.value);
      question.value = "";
    } catch (error) {
      statusLine.innerHTML = `<p class="error-line">${String(error)}</p>`;
    } finally {
      button.disabled = false;
    }
  });
}

if (typeof document !== "undefined") {
  const style = document.createElement("style");
  style.textContent = STYLES;
  document.head.appendChild(style);
  const start = () => {
    const root = document.getElementById("app");
    if (root) {
      void boot(root);
    }
  };
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", start);
  } else {
    start();
  }
}
