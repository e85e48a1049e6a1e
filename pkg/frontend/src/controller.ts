// Application state machine, UI-framework free so tests can drive it
// headlessly. The view layer (viewport.ts / main.ts) subscribes to frames
// and state changes; all model math stays on the server.

import { ApiError, Client, MeshPayload } from "./api.js";
import { OrbitCamera, Vec3, camSpec, dragTarget, project } from "./camera.js";
import { Coalescer, debounce } from "./coalesce.js";
import { HandleDot, pickHandle } from "./picking.js";

export interface FrameSink {
  showFrame(png: ArrayBuffer): void;
  showOverlay(dots: HandleDot[], edges: [HandleDot, HandleDot][]): void;
  showError(message: string): void;
  clearError(): void;
}

export interface ViewSize {
  width: number;
  height: number;
}

export class AppController {
  client: Client;
  sink: FrameSink;
  size: ViewSize;
  sessionId: string | null = null;
  mesh: MeshPayload | null = null;
  camera: OrbitCamera = {
    azimuth: 0.6, elevation: 0.35, distance: 3.0, target: [0, 0, 0], fov: 0.8,
  };
  intensity = 1.0;
  selected: number | null = null;
  lastFrame: ArrayBuffer | null = null;
  private drags: Coalescer;
  private ackedMesh: MeshPayload | null = null;
  readonly scrub: (t: number) => void;

  constructor(client: Client, sink: FrameSink, size: ViewSize) {
    this.client = client;
    this.sink = sink;
    this.size = size;
    this.drags = new Coalescer((err) => this.fail(err));
    this.scrub = debounce((t: number) => this.commitTime(t), 50);
  }

  private fail(err: unknown) {
    const message = err instanceof ApiError
      ? `${err.code}: ${err.message}` : String(err);
    this.sink.showError(message);
    // roll back to the last acknowledged mesh
    if (this.ackedMesh) {
      this.mesh = this.ackedMesh;
      this.redrawOverlay();
    }
  }

  async open(checkpoint: string): Promise<void> {
    const { session_id } = await this.client.createSession(checkpoint);
    this.sessionId = session_id;
    await this.refreshMesh();
    this.fitCamera();
    await this.refreshFrame();
  }

  async close(): Promise<void> {
    if (this.sessionId) {
      await this.client.deleteSession(this.sessionId);
      this.sessionId = null;
    }
  }

  private fitCamera() {
    if (!this.mesh) return;
    const vs = this.mesh.rest;
    const lo = [Infinity, Infinity, Infinity];
    const hi = [-Infinity, -Infinity, -Infinity];
    for (const v of vs) {
      for (let i = 0; i < 3; i++) {
        lo[i] = Math.min(lo[i], v[i]);
        hi[i] = Math.max(hi[i], v[i]);
      }
    }
    this.camera.target = [
      (lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2];
    const radius = Math.max(
      Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]) / 2, 1e-3);
    this.camera.distance = (2.5 * radius) / Math.tan(this.camera.fov / 2);
  }

  async refreshMesh(): Promise<void> {
    if (!this.sessionId) return;
    this.mesh = await this.client.getMesh(this.sessionId);
    this.ackedMesh = this.mesh;
    this.redrawOverlay();
  }

  async refreshFrame(): Promise<void> {
    if (!this.sessionId) return;
    const png = await this.client.render(
      this.sessionId, this.size.width, this.size.height, camSpec(this.camera));
    this.lastFrame = png;
    this.sink.showFrame(png);
    this.redrawOverlay();
  }

  handleDots(): HandleDot[] {
    if (!this.mesh) return [];
    return this.mesh.handles.map((id) => {
      const p = this.mesh!.vertices[id] as Vec3;
      const pr = project(p, this.camera, this.size.width, this.size.height);
      return { id, u: pr.u, v: pr.v, visible: pr.visible };
    });
  }

  private redrawOverlay() {
    if (!this.mesh) return;
    const dots = this.handleDots();
    this.sink.showOverlay(dots, []);
  }

  pick(x: number, y: number): number | null {
    this.selected = pickHandle(x, y, this.handleDots());
    return this.selected;
  }

  // Drag the selected handle toward the screen point; coalesced so fast
  // pointer streams keep at most one request in flight plus one queued.
  dragTo(x: number, y: number): void {
    if (this.sessionId === null || this.selected === null || !this.mesh) return;
    const anchor = this.mesh.vertices[this.selected] as Vec3;
    const target = dragTarget(x, y, anchor, this.camera,
                              this.size.width, this.size.height);
    const vertex = this.selected;
    const T = this.intensity;
    this.drags.submit(async () => {
      this.sink.clearError();
      await this.client.drag(this.sessionId!, [{ vertex, target }], T);
      await this.refreshMesh();
      await this.refreshFrame();
    });
  }

  async commitTime(t: number): Promise<void> {
    if (!this.sessionId) return;
    this.drags.submit(async () => {
      this.sink.clearError();
      await this.client.setTime(this.sessionId!, t);
      await this.refreshMesh();
      await this.refreshFrame();
    });
  }

  orbitBy(dAz: number, dEl: number): void {
    this.camera.azimuth += dAz;
    this.camera.elevation = Math.min(
      Math.max(this.camera.elevation + dEl, -1.5), 1.5);
    this.drags.submit(() => this.refreshFrame());
  }

  zoomBy(factor: number): void {
    this.camera.distance = Math.max(this.camera.distance * factor, 1e-3);
    this.drags.submit(() => this.refreshFrame());
  }

  async settle(): Promise<void> {
    await this.drags.drain();
  }
}
