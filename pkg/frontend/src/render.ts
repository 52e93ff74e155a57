/** DOM rendering. Answers are Markdown-lite; [n] markers become reference links. */

import type { Reference, Trace } from "./api.js";
import type { ChatViewModel, Message } from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Headings, dash lists, and paragraphs; everything else stays literal text. */
export function markdownLite(text: string): string {
  const out: string[] = [];
  let list: string[] = [];
  let paragraph: string[] = [];
  const flushList = () => {
    if (list.length) out.push(`<ul>${list.map((i) => `<li>${i}</li>`).join("")}</ul>`);
    list = [];
  };
  const flushParagraph = () => {
    if (paragraph.length) out.push(`<p>${paragraph.join("<br>")}</p>`);
    paragraph = [];
  };
  for (const raw of text.split("\n")) {
    const line = raw.trimEnd();
    const heading = /^(#{1,3}) +(.*)$/.exec(line);
    if (heading) {
      flushList();
      flushParagraph();
      const level = heading[1]!.length + 2; // h3..h5 inside a bubble
      out.push(`<h${level}>${escapeHtml(heading[2]!)}</h${level}>`);
    } else if (line.startsWith("- ")) {
      flushParagraph();
      list.push(escapeHtml(line.slice(2)));
    } else if (line === "") {
      flushList();
      flushParagraph();
    } else {
      flushList();
      paragraph.push(escapeHtml(line));
    }
  }
  flushList();
  flushParagraph();
  return out.join("");
}

/** Turn [n] into a panel link only when reference n actually exists. */
export function linkMarkers(html: string, references: Reference[]): string {
  const known = new Set(references.map((r) => r.n));
  return html.replace(/\[(\d+)\]/g, (match, digits: string) => {
    const n = Number(digits);
    if (!known.has(n)) return match;
    return `<a class="marker" href="#ref-${n}">[${n}]</a>`;
  });
}

export function renderAnswerHtml(text: string, references: Reference[]): string {
  return linkMarkers(markdownLite(text), references);
}

function bubble(message: Message, index: number, model: ChatViewModel): string {
  if (message.kind === "user") {
    return `<div class="bubble user">${escapeHtml(message.text)}</div>`;
  }
  if (message.kind === "clarifying_question") {
    const chips = message.options
      .map(
        (option, i) =>
          `<button class="chip" data-chip="${index}:${i}">${escapeHtml(option)}</button>`,
      )
      .join("");
    return (
      `<div class="bubble clarifying"><span class="q-mark">?</span> ` +
      `${escapeHtml(message.text)}` +
      (chips ? `<div class="chips">${chips}</div>` : "") +
      `</div>`
    );
  }
  if (message.kind === "error") {
    const retry =
      message.retryText !== null
        ? `<button class="retry" data-retry="${index}">Retry</button>`
        : "";
    return `<div class="bubble error">${escapeHtml(message.text)} ${retry}</div>`;
  }
  return `<div class="bubble answer">${renderAnswerHtml(message.text, model.references)}</div>`;
}

export function renderMessages(container: HTMLElement, model: ChatViewModel): void {
  container.innerHTML = model.messages
    .map((message, index) => bubble(message, index, model))
    .join("");
  if (model.pending) {
    container.insertAdjacentHTML("beforeend", `<div class="bubble waiting">...</div>`);
  }
}

export function renderReferences(container: HTMLElement, model: ChatViewModel): void {
  if (!model.references.length) {
    container.innerHTML = `<p class="empty">No references yet.</p>`;
    return;
  }
  const rows = model.references
    .map(
      (r) =>
        `<li class="ref-row" id="ref-${r.n}"><span class="ref-n">[${r.n}]</span> ` +
        `<a href="${escapeHtml(r.locator)}" rel="noopener">${escapeHtml(r.title)}</a> ` +
        `<span class="ref-meta">(${escapeHtml(r.kind)}, ${escapeHtml(r.date)})</span></li>`,
    )
    .join("");
  container.innerHTML = `<ul class="ref-list">${rows}</ul>`;
}

function channelSection(name: string, fragments: Record<string, Trace["channels"]["local"][string]>): string {
  const rows = Object.entries(fragments)
    .map(([query, fragment]) => {
      if (fragment.error) {
        return `<li>${escapeHtml(query)}: <span class="err">${escapeHtml(fragment.error)}</span></li>`;
      }
      const stats =
        name === "local"
          ? `keyword ${fragment.keyword_hits ?? 0}, semantic ${fragment.semantic_hits ?? 0}, ` +
            `pool ${fragment.pool ?? 0}, ranker ${fragment.ranker ?? "-"}`
          : `${(fragment.rounds ?? []).length} round(s), ` +
            `${(fragment.evidence ?? []).length} evidence page(s)`;
      return `<li>${escapeHtml(query)}: ${escapeHtml(stats)}</li>`;
    })
    .join("");
  return `<section class="channel"><h4>${name} channel</h4><ul>${rows}</ul></section>`;
}

export function renderTrace(container: HTMLElement, model: ChatViewModel): void {
  if (model.traceState === "closed") {
    container.innerHTML = "";
    container.hidden = true;
    return;
  }
  container.hidden = false;
  if (model.traceState === "missing" || model.trace === null) {
    container.innerHTML = `<p class="empty">Trace unavailable.</p>`;
    return;
  }
  const trace = model.trace;
  if (trace.mode === "zeroshot") {
    container.innerHTML = `<p class="empty">No retrieval performed for this answer.</p>`;
    return;
  }
  const subQueries = trace.intent.sub_queries
    .map((sq) => `<li>${escapeHtml(sq.text)} <em>(${escapeHtml(sq.purpose)})</em></li>`)
    .join("");
  const assembled = trace.reconciler.assembled
    .map(
      (row) =>
        `<li>[${row.eid}] tier ${row.authority_tier}, ${escapeHtml(row.date)}, ` +
        `${escapeHtml(row.origin)}: ${escapeHtml(row.title)}</li>`,
    )
    .join("");
  const channels: string[] = [];
  if (Object.keys(trace.channels.local).length) {
    channels.push(channelSection("local", trace.channels.local));
  }
  if (Object.keys(trace.channels.web).length) {
    channels.push(channelSection("web", trace.channels.web));
  }
  container.innerHTML =
    `<h3>Trace ${escapeHtml(trace.trace_id)} (${escapeHtml(trace.mode)})</h3>` +
    `<section><h4>Sub-queries</h4><ul>${subQueries}</ul></section>` +
    channels.join("") +
    `<section><h4>Evidence order</h4><ol class="assembled">${assembled}</ol></section>`;
}

export function render(
  model: ChatViewModel,
  nodes: { messages: HTMLElement; references: HTMLElement; trace: HTMLElement },
): void {
  renderMessages(nodes.messages, model);
  renderReferences(nodes.references, model);
  renderTrace(nodes.trace, model);
}
