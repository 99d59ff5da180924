/**
 * Top-down scene and instrument rendering.
 *
 * The pure layout helpers (camera transform, bar geometry, gauge sweep)
 * are separated from the canvas calls so they can be checked without a
 * DOM. World frame: x along the course, y to the left; the canvas shows
 * x rightward and y upward, camera following the vehicle.
 */

import { HelloFrame, StateFrame } from "./protocol.js";
import { GUIDANCE_CAP, TORQUE_DISPLAY_RANGE, TorqueBar } from "./viewmodel.js";

export interface Viewport {
  width: number;
  height: number;
  metersPerPixel: number;
  /** world x kept at the left quarter of the screen */
  followX: number;
}

export function worldToScreen(vp: Viewport, x: number, y: number):
    [number, number] {
  const px = vp.width * 0.25 + (x - vp.followX) / vp.metersPerPixel;
  const py = vp.height * 0.5 - y / vp.metersPerPixel;
  return [px, py];
}

export interface BarGeometry {
  left: number;   // px from the bar's left edge
  width: number;  // px, never negative
  capMark: number | null; // px offset of the cap marker, when inside range
}

/**
 * Signed horizontal bar: zero at the middle, positive extends right.
 * capTorque draws a marker where the server clamps (guidance bar only).
 */
export function barGeometry(bar: TorqueBar, pixelWidth: number,
    capTorque: number | null = null): BarGeometry {
  const half = pixelWidth / 2;
  const extent = bar.fraction * half;
  const geometry: BarGeometry = {
    left: extent >= 0 ? half : half + extent,
    width: Math.abs(extent),
    capMark: null,
  };
  if (capTorque !== null && capTorque <= TORQUE_DISPLAY_RANGE) {
    geometry.capMark = half + (capTorque / TORQUE_DISPLAY_RANGE) * half;
  }
  return geometry;
}

/** Gauge sweep angle for K in [0, 1]: half circle, left to right. */
export function gaugeSweep(k: number): number {
  const clamped = Math.max(0, Math.min(1, k));
  return Math.PI + clamped * Math.PI;
}

// ------------------------------------------------------------- canvas side

const LANE_COLOR = "#2e343c";
const EDGE_COLOR = "#565e69";
const PATH_COLOR = "#3f7d5a";
const CONE_COLOR = "#d98a2b";
const CAR_COLOR = "#cfd6df";

export function drawScene(ctx: CanvasRenderingContext2D, hello: HelloFrame,
    state: StateFrame | null, vp: Viewport): void {
  const track = hello.track;
  ctx.clearRect(0, 0, vp.width, vp.height);

  const halfLane = track.lane_width / 2;
  const edges = [-halfLane, halfLane, track.lane_width + halfLane];
  const [x0] = [vp.followX - vp.width * 0.25 * vp.metersPerPixel];
  const x1 = x0 + vp.width * vp.metersPerPixel;

  ctx.fillStyle = LANE_COLOR;
  const [, topPy] = worldToScreen(vp, x0, edges[2]);
  const [, botPy] = worldToScreen(vp, x0, edges[0]);
  ctx.fillRect(0, topPy, vp.width, botPy - topPy);

  ctx.strokeStyle = EDGE_COLOR;
  ctx.lineWidth = 1;
  for (const edge of edges) {
    const [, py] = worldToScreen(vp, x0, edge);
    ctx.beginPath();
    ctx.moveTo(0, py);
    ctx.lineTo(vp.width, py);
    ctx.stroke();
  }

  ctx.strokeStyle = PATH_COLOR;
  ctx.lineWidth = 2;
  ctx.beginPath();
  let started = false;
  for (const [wx, wy] of track.centerline) {
    if (wx < x0 - 5 || wx > x1 + 5) continue;
    const [px, py] = worldToScreen(vp, wx, wy);
    if (!started) {
      ctx.moveTo(px, py);
      started = true;
    } else {
      ctx.lineTo(px, py);
    }
  }
  ctx.stroke();

  ctx.fillStyle = CONE_COLOR;
  for (const [wx, wy] of track.cones) {
    const [px, py] = worldToScreen(vp, wx, wy);
    ctx.beginPath();
    ctx.arc(px, py, 3, 0, 2 * Math.PI);
    ctx.fill();
  }

  if (state !== null) {
    const [px, py] = worldToScreen(vp, state.x, state.y);
    ctx.save();
    ctx.translate(px, py);
    ctx.rotate(-state.psi);
    ctx.fillStyle = CAR_COLOR;
    const length = 4.4 / vp.metersPerPixel;
    const width = 1.8 / vp.metersPerPixel;
    ctx.fillRect(-length / 2, -width / 2, length, width);
    ctx.restore();
  }
}

export function drawBar(ctx: CanvasRenderingContext2D, bar: TorqueBar,
    x: number, y: number, pixelWidth: number, height: number,
    withCap: boolean): void {
  const geo = barGeometry(bar, pixelWidth, withCap ? GUIDANCE_CAP : null);
  ctx.strokeStyle = EDGE_COLOR;
  ctx.strokeRect(x, y, pixelWidth, height);
  ctx.fillStyle = bar.clamped ? "#c25749" : "#5a8bbf";
  ctx.fillRect(x + geo.left, y + 1, geo.width, height - 2);
  ctx.strokeStyle = "#9aa3ad";
  ctx.beginPath();
  ctx.moveTo(x + pixelWidth / 2, y);
  ctx.lineTo(x + pixelWidth / 2, y + height);
  ctx.stroke();
  if (geo.capMark !== null) {
    ctx.strokeStyle = "#c2a14a";
    for (const mark of [geo.capMark, pixelWidth - geo.capMark]) {
      ctx.beginPath();
      ctx.moveTo(x + mark, y);
      ctx.lineTo(x + mark, y + height);
      ctx.stroke();
    }
  }
}

export function drawGauge(ctx: CanvasRenderingContext2D, k: number,
    cx: number, cy: number, radius: number): void {
  ctx.strokeStyle = EDGE_COLOR;
  ctx.lineWidth = 6;
  ctx.beginPath();
  ctx.arc(cx, cy, radius, Math.PI, 2 * Math.PI);
  ctx.stroke();
  ctx.strokeStyle = "#5a8bbf";
  ctx.beginPath();
  ctx.arc(cx, cy, radius, Math.PI, gaugeSweep(k));
  ctx.stroke();
  ctx.lineWidth = 1;
}
