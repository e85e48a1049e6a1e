// Handle picking: nearest projected handle within a pixel radius.

export interface HandleDot {
  id: number;
  u: number;
  v: number;
  visible: boolean;
}

export const PICK_RADIUS_PX = 12;

export function pickHandle(
  x: number, y: number, dots: HandleDot[], radius = PICK_RADIUS_PX,
): number | null {
  let best: number | null = null;
  let bestD = Infinity;
  for (const dot of dots) {
    if (!dot.visible) continue;
    const d = Math.hypot(dot.u - x, dot.v - y);
    if (d > radius) continue;
    // nearer wins; exact ties go to the lower id
    if (d < bestD || (d === bestD && (best === null || dot.id < best))) {
      best = dot.id;
      bestD = d;
    }
  }
  return best;
}
