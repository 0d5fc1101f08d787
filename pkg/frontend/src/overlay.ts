/**
 * Client-side bounding-box overlay.
 *
 * Boxes come from result JSON in source-pixel coordinates ([x0, x1) half
 * open, like the detector emits them).  The overlay scales them to the
 * displayed image size and draws outlines on a canvas stacked over the
 * <img>; the server-annotated PNG stays available as a toggle so the two
 * renderings can be compared directly.
 */

import { Box } from "./jobs.js";

export interface DisplayBox {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function scaleBox(
  box: Box,
  natural: { width: number; height: number },
  display: { width: number; height: number },
): DisplayBox {
  const sx = display.width / natural.width;
  const sy = display.height / natural.height;
  return {
    left: box.x0 * sx,
    top: box.y0 * sy,
    width: (box.x1 - box.x0) * sx,
    height: (box.y1 - box.y0) * sy,
  };
}

export const OVERLAY_STYLE = {
  strokeStyle: "#ff3b30",
  lineWidth: 2,
} as const;

/** Draw box outlines over the image; clears previous strokes first. */
export function drawOverlay(
  canvas: HTMLCanvasElement,
  image: HTMLImageElement,
  boxes: Box[],
): void {
  canvas.width = image.clientWidth;
  canvas.height = image.clientHeight;
  const context = canvas.getContext("2d");
  if (context === null) {
    return;
  }
  context.clearRect(0, 0, canvas.width, canvas.height);
  context.strokeStyle = OVERLAY_STYLE.strokeStyle;
  context.lineWidth = OVERLAY_STYLE.lineWidth;
  const natural = { width: image.naturalWidth, height: image.naturalHeight };
  const display = { width: image.clientWidth, height: image.clientHeight };
  for (const box of boxes) {
    const rect = scaleBox(box, natural, display);
    context.strokeRect(rect.left, rect.top, rect.width, rect.height);
  }
}
