// Orbit camera math mirroring the server's pinhole convention: camera looks
// along -z, y up in camera space; pixel u grows with x, v grows downward.
// The server renders from the same parameters, so local projection is only
// used for overlay drawing and picking, never for model math.

export type Vec3 = [number, number, number];

export interface OrbitCamera {
  azimuth: number;
  elevation: number;
  distance: number;
  target: Vec3;
  fov: number; // horizontal, radians
}

export interface CameraFrame {
  r: number[][]; // world-to-camera rotation, rows
  t: Vec3;
  eye: Vec3;
}

const cross = (a: Vec3, b: Vec3): Vec3 => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0],
];
const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const add = (a: Vec3, b: Vec3): Vec3 => [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];
const dot = (a: Vec3, b: Vec3) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
const norm = (a: Vec3) => Math.sqrt(dot(a, a));
const normalize = (a: Vec3): Vec3 => scale(a, 1 / norm(a));

export function cameraFrame(cam: OrbitCamera): CameraFrame {
  const ce = Math.cos(cam.elevation);
  const eye = add(cam.target, [
    cam.distance * ce * Math.cos(cam.azimuth),
    cam.distance * ce * Math.sin(cam.azimuth),
    cam.distance * Math.sin(cam.elevation),
  ]);
  let up: Vec3 = [0, 0, 1];
  if (Math.abs(Math.sin(cam.elevation)) > 0.999) up = [0, 1, 0];
  const z = normalize(sub(eye, cam.target));
  const x = normalize(cross(up, z));
  const y = cross(z, x);
  // world-to-camera rotation rows are the camera axes
  const r = [
    [x[0], x[1], x[2]],
    [y[0], y[1], y[2]],
    [z[0], z[1], z[2]],
  ];
  const t: Vec3 = [-dot(x, eye), -dot(y, eye), -dot(z, eye)];
  return { r, t, eye };
}

export interface Projected {
  u: number;
  v: number;
  depth: number;
  visible: boolean;
}

export function project(
  p: Vec3, cam: OrbitCamera, width: number, height: number,
): Projected {
  const { r, t } = cameraFrame(cam);
  const pc: Vec3 = [
    r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
    r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
    r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
  ];
  const depth = -pc[2];
  const fx = width / (2 * Math.tan(cam.fov / 2));
  const u = width / 2 + (fx * pc[0]) / depth;
  const v = height / 2 - (fx * pc[1]) / depth;
  return { u, v, depth, visible: depth > 1e-6 };
}

// Unproject a screen point onto the camera-facing plane through `anchor`
// (the standard drag-gizmo convention).
export function dragTarget(
  u: number, v: number, anchor: Vec3, cam: OrbitCamera,
  width: number, height: number,
): Vec3 {
  const { r, eye } = cameraFrame(cam);
  const fx = width / (2 * Math.tan(cam.fov / 2));
  const dirCam: Vec3 = [(u - width / 2) / fx, -(v - height / 2) / fx, -1];
  // world direction = R^T dirCam
  const dir: Vec3 = normalize([
    r[0][0] * dirCam[0] + r[1][0] * dirCam[1] + r[2][0] * dirCam[2],
    r[0][1] * dirCam[0] + r[1][1] * dirCam[1] + r[2][1] * dirCam[2],
    r[0][2] * dirCam[0] + r[1][2] * dirCam[1] + r[2][2] * dirCam[2],
  ]);
  // plane normal = camera forward
  const n: Vec3 = [-r[2][0], -r[2][1], -r[2][2]];
  const denom = dot(n, dir);
  const s = dot(n, sub(anchor, eye)) / (Math.abs(denom) < 1e-12 ? 1e-12 : denom);
  return add(eye, scale(dir, s));
}

// Server-side camera spec string: az,el,dist,tx,ty,tz,fov
export function camSpec(cam: OrbitCamera): string {
  const f = (x: number) => x.toPrecision(10);
  return [cam.azimuth, cam.elevation, cam.distance,
          cam.target[0], cam.target[1], cam.target[2], cam.fov].map(f).join(",");
}
