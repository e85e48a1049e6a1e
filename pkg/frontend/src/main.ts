// Entry point: wires the controller to DOM inputs. Left-drag on a handle
// deforms; left-drag elsewhere orbits; wheel zooms.

import { Client } from "./api.js";
import { AppController } from "./controller.js";
import { CanvasViewport } from "./viewport.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function boot(base = ""): AppController {
  const canvas = el<HTMLCanvasElement>("viewport");
  const banner = el<HTMLElement>("banner");
  const view = new CanvasViewport(canvas, banner);
  const app = new AppController(new Client(base), view,
                                { width: canvas.width, height: canvas.height });

  el<HTMLButtonElement>("open").addEventListener("click", () => {
    const ckpt = el<HTMLInputElement>("checkpoint").value.trim();
    app.open(ckpt).catch((e) => view.showError(String(e)));
  });

  const tSlider = el<HTMLInputElement>("intensity");
  tSlider.addEventListener("input", () => {
    app.intensity = Number(tSlider.value);
    el<HTMLElement>("intensity-label").textContent = tSlider.value;
  });

  const timeline = el<HTMLInputElement>("timeline");
  timeline.addEventListener("input", () => {
    app.scrub(Number(timeline.value));
    el<HTMLElement>("timeline-label").textContent = timeline.value;
  });

  let mode: "idle" | "drag" | "orbit" = "idle";
  let last = { x: 0, y: 0 };
  canvas.addEventListener("pointerdown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    last = { x, y };
    const picked = app.pick(x, y);
    view.selectedId = picked;
    mode = picked === null ? "orbit" : "drag";
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (mode === "idle") return;
    const rect = canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    if (mode === "drag") {
      app.dragTo(x, y);
    } else {
      app.orbitBy(-(x - last.x) * 0.01, (y - last.y) * 0.01);
    }
    last = { x, y };
  });
  canvas.addEventListener("pointerup", () => {
    mode = "idle";
    view.selectedId = app.selected;
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    app.zoomBy(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
  });
  return app;
}

declare global {
  interface Window {
    meshsplatApp?: AppController;
  }
}

if (typeof document !== "undefined" && document.getElementById("viewport")) {
  window.meshsplatApp = boot();
}
