/** Chat view model: single-owner state for one session, one request at a time. */

import type { Api, Reference, Trace } from "./api.js";

export type MessageKind = "user" | "clarifying_question" | "final_answer" | "error";

export interface Message {
  kind: MessageKind;
  text: string;
  options: string[];
  /** Set on error bubbles: the user text to resend. */
  retryText: string | null;
}

export type TraceState = "closed" | "open" | "missing";

export class ChatViewModel {
  sessionId: string | null = null;
  messages: Message[] = [];
  pending = false;
  /** Mirrors the references array of the last final answer, one-to-one. */
  references: Reference[] = [];
  lastTraceId: string | null = null;
  trace: Trace | null = null;
  traceState: TraceState = "closed";
  private listeners: (() => void)[] = [];

  constructor(private readonly api: Api) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  async start(): Promise<void> {
    this.sessionId = await this.api.createSession();
    this.notify();
  }

  async sendMessage(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed) return;
    if (this.pending) throw new Error("a request is already pending");
    if (this.sessionId === null) throw new Error("session not started");
    this.messages.push({ kind: "user", text: trimmed, options: [], retryText: null });
    this.pending = true;
    this.notify();
    try {
      const reply = await this.api.postMessage(this.sessionId, trimmed);
      if (reply.kind === "final_answer") {
        this.references = reply.references ?? [];
        this.lastTraceId = reply.trace_id ?? null;
        this.trace = null;
        this.traceState = "closed";
      }
      this.messages.push({
        kind: reply.kind,
        text: reply.text,
        options: reply.options ?? [],
        // A server-side error is retryable too: the session is intact.
        retryText: reply.kind === "error" ? trimmed : null,
      });
    } catch (exc) {
      this.messages.push({
        kind: "error",
        text: `Request failed: ${exc instanceof Error ? exc.message : String(exc)}`,
        options: [],
        retryText: trimmed,
      });
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  /** Resend the text behind an error bubble, replacing the bubble. */
  async retry(messageIndex: number): Promise<void> {
    const message = this.messages[messageIndex];
    if (!message || message.kind !== "error" || message.retryText === null) return;
    const text = message.retryText;
    // Drop the error bubble and its originating user bubble before resending.
    this.messages.splice(messageIndex, 1);
    const previous = this.messages[messageIndex - 1];
    if (previous && previous.kind === "user" && previous.text === text) {
      this.messages.splice(messageIndex - 1, 1);
    }
    await this.sendMessage(text);
  }

  async toggleTrace(): Promise<void> {
    if (this.lastTraceId === null) return;
    if (this.traceState !== "closed") {
      this.traceState = "closed";
      this.notify();
      return;
    }
    const trace = await this.api.getTrace(this.lastTraceId);
    this.trace = trace;
    this.traceState = trace === null ? "missing" : "open";
    this.notify();
  }
}
