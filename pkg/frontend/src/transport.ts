// Live update loop: debounce after pointer-up, POST the payload, and let
// newer requests supersede older ones. At most one response ever renders
// per generation; a response that comes back after a newer submit is
// dropped on the floor instead of flickering the result canvas backwards.

import type { EditPayloadWire } from "./strokes.js";

export interface EditResult {
  image: string;
}

export interface QueueHooks {
  // called only for the newest generation's response
  onResult: (result: EditResult, payload: EditPayloadWire) => void;
  // network or HTTP failure: the UI shows a stale badge, nothing is retried
  onError: (error: unknown) => void;
}

export interface QueueOptions {
  endpoint?: string;
  debounceMs?: number;
  fetchFn?: typeof fetch;
}

const DEFAULT_DEBOUNCE_MS = 150;

export class EditQueue {
  private readonly endpoint: string;
  private readonly debounceMs: number;
  private readonly fetchFn: typeof fetch;
  private readonly hooks: QueueHooks;

  private generation = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private queued: EditPayloadWire | null = null;
  private inFlight = 0;
  private staleFlag = false;

  constructor(hooks: QueueHooks, options: QueueOptions = {}) {
    this.hooks = hooks;
    this.endpoint = options.endpoint ?? "/v1/edit";
    this.debounceMs = options.debounceMs ?? DEFAULT_DEBOUNCE_MS;
    this.fetchFn = options.fetchFn ?? fetch;
  }

  // Stroke completed: (re)start the debounce window. Submitting again
  // inside the window replaces the queued payload, so a burst of strokes
  // costs one request.
  submit(payload: EditPayloadWire): void {
    this.queued = payload;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => this.flush(), this.debounceMs);
  }

  // True when the result canvas no longer reflects the newest strokes:
  // either a request is pending or the last one failed.
  get stale(): boolean {
    return this.staleFlag || this.inFlight > 0 || this.queued !== null;
  }

  get pending(): number {
    return this.inFlight;
  }

  private flush(): void {
    this.timer = null;
    const payload = this.queued;
    if (payload === null) return;
    this.queued = null;
    const gen = ++this.generation;
    this.inFlight += 1;
    this.fetchFn(this.endpoint, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    })
      .then(async (response) => {
        if (!response.ok) {
          throw new Error(`edit failed: HTTP ${response.status}`);
        }
        return (await response.json()) as EditResult;
      })
      .then(
        (result) => {
          this.inFlight -= 1;
          if (gen !== this.generation) return; // superseded, latest wins
          this.staleFlag = false;
          this.hooks.onResult(result, payload);
        },
        (error) => {
          this.inFlight -= 1;
          if (gen === this.generation) this.staleFlag = true;
          this.hooks.onError(error);
        },
      );
  }
}
