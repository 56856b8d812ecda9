/** Stroke capture model: append-only polylines in canvas coordinates. */

export interface StrokePoint {
  x: number;
  y: number;
  /** milliseconds since the drawing session started */
  t: number;
}

export interface StrokeSet {
  readonly canvasSize: number;
  readonly strokes: ReadonlyArray<ReadonlyArray<StrokePoint>>;
}

export function emptyStrokeSet(canvasSize: number): StrokeSet {
  if (!Number.isFinite(canvasSize) || canvasSize <= 0) {
    throw new RangeError(`canvas size must be positive, got ${canvasSize}`);
  }
  return { canvasSize, strokes: [] };
}

function checkPoint(p: StrokePoint, size: number): void {
  if (!Number.isFinite(p.x) || !Number.isFinite(p.y) || !Number.isFinite(p.t)) {
    throw new RangeError(`non-finite stroke point (${p.x}, ${p.y}, t=${p.t})`);
  }
  if (p.x < 0 || p.x > size || p.y < 0 || p.y > size) {
    throw new RangeError(
      `point (${p.x}, ${p.y}) outside canvas bounds [0, ${size}]`,
    );
  }
}

/** Start a new stroke with its first point. Returns a new StrokeSet. */
export function beginStroke(set: StrokeSet, p: StrokePoint): StrokeSet {
  checkPoint(p, set.canvasSize);
  return { ...set, strokes: [...set.strokes, [p]] };
}

/** Append a point to the stroke currently being drawn. */
export function extendStroke(set: StrokeSet, p: StrokePoint): StrokeSet {
  if (set.strokes.length === 0) {
    throw new Error("no stroke in progress; call beginStroke first");
  }
  checkPoint(p, set.canvasSize);
  const strokes = set.strokes.slice();
  const last = strokes[strokes.length - 1]!;
  strokes[strokes.length - 1] = [...last, p];
  return { ...set, strokes };
}

/** Undo removes the whole most recent stroke, never part of one. */
export function undoStroke(set: StrokeSet): StrokeSet {
  return { ...set, strokes: set.strokes.slice(0, -1) };
}

export function clearStrokes(set: StrokeSet): StrokeSet {
  return { ...set, strokes: [] };
}

export function isEmpty(set: StrokeSet): boolean {
  return set.strokes.length === 0;
}
