// @vitest-environment jsdom
// Boots the real DOM wiring against the live service, with canvas drawing
// stubbed out (jsdom has no raster backend).

import { readFileSync } from "node:fs";
import { resolve } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";
import { boot } from "../src/main";

const info = JSON.parse(
  readFileSync(resolve(__dirname, "../.fixture/server.json"), "utf-8"));

const wait = (ms: number) => new Promise((r) => setTimeout(r, ms));

function stubCanvas() {
  const noop = () => {};
  const fakeCtx = {
    fillRect: noop, drawImage: noop, beginPath: noop, arc: noop,
    fill: noop, stroke: noop, set fillStyle(_: string) {}, set strokeStyle(_: string) {},
  };
  (HTMLCanvasElement.prototype as any).getContext = () => fakeCtx;
  (HTMLCanvasElement.prototype as any).setPointerCapture = noop;
  (globalThis as any).createImageBitmap = async () => ({});
}

describe("DOM wiring", () => {
  beforeAll(() => {
    stubCanvas();
    const html = readFileSync(resolve(__dirname, "../index.html"), "utf-8");
    const body = html.slice(html.indexOf("<body>") + 6, html.indexOf("</body>"));
    document.body.innerHTML = body;
  });

  it("opens a session and performs pointer-driven edits without errors", async () => {
    const app = boot(info.base);
    const banner = document.getElementById("banner")!;
    (document.getElementById("checkpoint") as HTMLInputElement).value =
      info.checkpoint;
    document.getElementById("open")!.dispatchEvent(
      new window.MouseEvent("click", { bubbles: true }));
    for (let i = 0; i < 100 && app.mesh === null; i++) await wait(100);
    expect(app.mesh).not.toBeNull();

    const canvas = document.getElementById("viewport")!;
    const dot = app.handleDots().find((d) => d.visible)!;
    const down = new window.MouseEvent("pointerdown", {
      bubbles: true, clientX: dot.u, clientY: dot.v });
    canvas.dispatchEvent(down);
    expect(app.selected).toBe(dot.id);

    const slider = document.getElementById("intensity") as HTMLInputElement;
    slider.value = "0.5";
    slider.dispatchEvent(new window.Event("input", { bubbles: true }));
    expect(app.intensity).toBe(0.5);

    canvas.dispatchEvent(new window.MouseEvent("pointermove", {
      bubbles: true, clientX: dot.u + 10, clientY: dot.v }));
    canvas.dispatchEvent(new window.MouseEvent("pointerup", { bubbles: true }));
    await app.settle();

    const timeline = document.getElementById("timeline") as HTMLInputElement;
    timeline.value = "0.5";
    timeline.dispatchEvent(new window.Event("input", { bubbles: true }));
    await wait(80);
    await app.settle();

    expect(banner.style.display === "" || banner.style.display === "none")
      .toBe(true);
    await app.close();
  });
});
