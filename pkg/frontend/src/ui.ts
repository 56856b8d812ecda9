/** Browser wiring: canvas pointer events in, results grid out.
 *
 * All behaviour lives in SketchController; this file only translates DOM
 * events to controller calls and snapshots to DOM updates.
 */

import { ApiClient } from "./api.js";
import { ControllerSnapshot, SketchController } from "./controller.js";

const CANVAS_SIZE = 256;

function strokePoint(canvas: HTMLCanvasElement, ev: PointerEvent, t0: number) {
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * CANVAS_SIZE;
  const y = ((ev.clientY - rect.top) / rect.height) * CANVAS_SIZE;
  return {
    x: Math.max(0, Math.min(CANVAS_SIZE, x)),
    y: Math.max(0, Math.min(CANVAS_SIZE, y)),
    t: performance.now() - t0,
  };
}

function redrawCanvas(ctx: CanvasRenderingContext2D, snapshot: ControllerSnapshot): void {
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
  ctx.strokeStyle = "#fff";
  ctx.lineWidth = 2.2;
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  for (const stroke of snapshot.strokes.strokes) {
    if (stroke.length === 0) continue;
    ctx.beginPath();
    ctx.moveTo(stroke[0]!.x, stroke[0]!.y);
    for (const p of stroke.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  }
}

function renderResults(grid: HTMLElement, client: ApiClient, snapshot: ControllerSnapshot): void {
  grid.replaceChildren(
    ...snapshot.results.map((r) => {
      const cell = document.createElement("figure");
      cell.className = "result";
      const img = document.createElement("img");
      img.src = client.photoUrl(r.photo_id);
      img.alt = r.photo_id;
      const caption = document.createElement("figcaption");
      caption.textContent = `${r.photo_id} · ${r.distance.toFixed(3)}`;
      cell.append(img, caption);
      return cell;
    }),
  );
}

export function mountApp(root: Document = document): void {
  const canvas = root.getElementById("sketch") as HTMLCanvasElement;
  const grid = root.getElementById("results") as HTMLElement;
  const banner = root.getElementById("banner") as HTMLElement;
  const status = root.getElementById("status") as HTMLElement;
  const undoButton = root.getElementById("undo") as HTMLButtonElement;
  const clearButton = root.getElementById("clear") as HTMLButtonElement;

  canvas.width = CANVAS_SIZE;
  canvas.height = CANVAS_SIZE;
  const ctx = canvas.getContext("2d")!;
  const client = new ApiClient();
  const t0 = performance.now();

  const controller = new SketchController({
    canvasSize: CANVAS_SIZE,
    client,
    onChange: (snapshot) => {
      redrawCanvas(ctx, snapshot);
      renderResults(grid, client, snapshot);
      status.textContent = snapshot.state;
      status.dataset.state = snapshot.state;
      banner.hidden = snapshot.errorMessage === null;
      banner.textContent = snapshot.errorMessage ?? "";
      undoButton.disabled = !snapshot.canRetrieve;
      clearButton.disabled = !snapshot.canRetrieve;
    },
  });

  let down = false;
  canvas.addEventListener("pointerdown", (ev) => {
    down = true;
    canvas.setPointerCapture(ev.pointerId);
    controller.strokeStarted(strokePoint(canvas, ev, t0));
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (down) controller.strokeExtended(strokePoint(canvas, ev, t0));
  });
  const finish = () => {
    if (down) {
      down = false;
      controller.strokeFinished();
    }
  };
  canvas.addEventListener("pointerup", finish);
  canvas.addEventListener("pointercancel", finish);

  undoButton.addEventListener("click", () => controller.undo());
  clearButton.addEventListener("click", () => controller.clear());
}

if (typeof document !== "undefined" && document.getElementById("sketch")) {
  mountApp();
}
