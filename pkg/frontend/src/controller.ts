/** UI state machine and retrieval scheduling.
 *
 * States: idle (empty canvas) -> drawing (strokes changing, debounce timer
 * armed) -> querying (one request in flight) -> results | error. Edits from
 * any state go back to drawing; undoing the last stroke returns to idle and
 * cancels any pending or in-flight work.
 *
 * Requests carry a monotonically increasing id; a response is applied only
 * if no newer request has been issued since, so out-of-order completions
 * can never show a superseded result set.
 */

import { ApiClient, RetrieveResult, ServiceError } from "./api.js";
import { rasterize } from "./raster.js";
import {
  StrokePoint,
  StrokeSet,
  beginStroke,
  clearStrokes,
  emptyStrokeSet,
  extendStroke,
  isEmpty,
  undoStroke,
} from "./strokes.js";

export type UiState = "idle" | "drawing" | "querying" | "results" | "error";

export interface ControllerSnapshot {
  state: UiState;
  strokes: StrokeSet;
  results: RetrieveResult[];
  errorMessage: string | null;
  canRetrieve: boolean;
}

export interface ControllerOptions {
  canvasSize?: number;
  targetSize?: number;
  k?: number;
  debounceMs?: number;
  client?: ApiClient;
  /** injectable timers so tests can run on fake clocks */
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  onChange?: (snapshot: ControllerSnapshot) => void;
}

export class SketchController {
  private strokes: StrokeSet;
  private state: UiState = "idle";
  private results: RetrieveResult[] = [];
  private errorMessage: string | null = null;

  private readonly targetSize: number;
  private readonly k: number;
  private readonly debounceMs: number;
  private readonly client: ApiClient;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;
  private readonly onChange: (snapshot: ControllerSnapshot) => void;

  private pendingTimer: unknown = null;
  private lastRequestId = 0;

  constructor(options: ControllerOptions = {}) {
    this.strokes = emptyStrokeSet(options.canvasSize ?? 256);
    this.targetSize = options.targetSize ?? 64;
    this.k = options.k ?? 10;
    this.debounceMs = options.debounceMs ?? 300;
    this.client = options.client ?? new ApiClient();
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((h) => clearTimeout(h as number));
    this.onChange = options.onChange ?? (() => {});
  }

  snapshot(): ControllerSnapshot {
    return {
      state: this.state,
      strokes: this.strokes,
      results: this.results,
      errorMessage: this.errorMessage,
      canRetrieve: !isEmpty(this.strokes),
    };
  }

  // ----------------------------------------------------------- edit events

  strokeStarted(p: StrokePoint): void {
    this.strokes = beginStroke(this.strokes, p);
    this.edited();
  }

  strokeExtended(p: StrokePoint): void {
    this.strokes = extendStroke(this.strokes, p);
    this.edited();
  }

  strokeFinished(): void {
    // geometry already captured point by point; this just (re)arms the timer
    this.edited();
  }

  undo(): void {
    this.strokes = undoStroke(this.strokes);
    this.edited();
  }

  clear(): void {
    this.strokes = clearStrokes(this.strokes);
    this.edited();
  }

  // ------------------------------------------------------------- internals

  private edited(): void {
    this.cancelPending();
    this.lastRequestId++; // retire any in-flight request; its response is stale now
    if (isEmpty(this.strokes)) {
      this.state = "idle";
      this.results = [];
      this.errorMessage = null;
      this.notify();
      return;
    }
    this.state = "drawing";
    this.pendingTimer = this.setTimer(() => {
      this.pendingTimer = null;
      void this.fire();
    }, this.debounceMs);
    this.notify();
  }

  private cancelPending(): void {
    if (this.pendingTimer !== null) {
      this.clearTimer(this.pendingTimer);
      this.pendingTimer = null;
    }
  }

  private async fire(): Promise<void> {
    if (isEmpty(this.strokes)) return;
    const requestId = ++this.lastRequestId;
    this.state = "querying";
    this.notify();
    try {
      const png = rasterize(this.strokes, this.targetSize);
      const response = await this.client.retrieve(png, this.k);
      if (requestId !== this.lastRequestId) return; // superseded: discard
      this.state = "results";
      this.results = response.results;
      this.errorMessage = null;
    } catch (err) {
      if (requestId !== this.lastRequestId) return;
      this.state = "error";
      // previous results stay on screen under the banner
      this.errorMessage =
        err instanceof ServiceError ? err.message : `request failed: ${String(err)}`;
    }
    this.notify();
  }

  private notify(): void {
    this.onChange(this.snapshot());
  }
}
