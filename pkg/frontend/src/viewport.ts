// Canvas view: paints the latest server frame and the handle overlay.

import { FrameSink } from "./controller.js";
import { HandleDot } from "./picking.js";

export class CanvasViewport implements FrameSink {
  private ctx: CanvasRenderingContext2D;
  private overlay: HandleDot[] = [];
  private frame: ImageBitmap | null = null;
  private banner: HTMLElement;
  selectedId: number | null = null;

  constructor(private canvas: HTMLCanvasElement, banner: HTMLElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
    this.banner = banner;
    banner.addEventListener("click", () => this.clearError());
  }

  showFrame(png: ArrayBuffer): void {
    const blob = new Blob([png], { type: "image/png" });
    createImageBitmap(blob).then((bmp) => {
      this.frame = bmp;
      this.paint();
    });
  }

  showOverlay(dots: HandleDot[]): void {
    this.overlay = dots;
    this.paint();
  }

  showError(message: string): void {
    this.banner.textContent = `${message} (click to dismiss)`;
    this.banner.style.display = "block";
  }

  clearError(): void {
    this.banner.style.display = "none";
  }

  private paint(): void {
    const { width, height } = this.canvas;
    this.ctx.fillStyle = "#111";
    this.ctx.fillRect(0, 0, width, height);
    if (this.frame) this.ctx.drawImage(this.frame, 0, 0, width, height);
    for (const dot of this.overlay) {
      if (!dot.visible) continue;
      this.ctx.beginPath();
      this.ctx.arc(dot.u, dot.v, 5, 0, 2 * Math.PI);
      this.ctx.fillStyle = dot.id === this.selectedId ? "#ff5050" : "#40c0ff";
      this.ctx.fill();
      this.ctx.strokeStyle = "#ffffff";
      this.ctx.stroke();
    }
  }
}
