import type { PatchInfo } from "./types.js";

export interface CropRect {
  sx: number;
  sy: number;
  sw: number;
  sh: number;
}

/**
 * Source rectangle for cropping a patch thumbnail out of the full image,
 * clamped to the image bounds. Pure so it can be tested without a canvas.
 */
export function patchCropRect(patch: PatchInfo): CropRect {
  const [x0, y0, x1, y1] = patch.box;
  const sx = Math.max(0, Math.min(x0, patch.image_width));
  const sy = Math.max(0, Math.min(y0, patch.image_height));
  const sw = Math.max(0, Math.min(x1, patch.image_width) - sx);
  const sh = Math.max(0, Math.min(y1, patch.image_height) - sy);
  return { sx, sy, sw, sh };
}

/**
 * Destination size that fits the crop inside a square cell of `cellSize`
 * pixels while preserving aspect ratio.
 */
export function fitInCell(
  crop: CropRect,
  cellSize: number,
): { dw: number; dh: number } {
  if (crop.sw <= 0 || crop.sh <= 0) return { dw: 0, dh: 0 };
  const scale = Math.min(cellSize / crop.sw, cellSize / crop.sh);
  return {
    dw: Math.max(1, Math.round(crop.sw * scale)),
    dh: Math.max(1, Math.round(crop.sh * scale)),
  };
}

/** Draw one patch thumbnail into a canvas cell from the full image bitmap. */
export function drawPatchThumbnail(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource,
  patch: PatchInfo,
  dx: number,
  dy: number,
  cellSize: number,
): void {
  const crop = patchCropRect(patch);
  if (crop.sw <= 0 || crop.sh <= 0) return;
  const { dw, dh } = fitInCell(crop, cellSize);
  ctx.drawImage(image, crop.sx, crop.sy, crop.sw, crop.sh, dx, dy, dw, dh);
}
