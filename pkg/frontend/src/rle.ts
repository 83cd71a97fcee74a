/** Run-length mask decoding and geometry helpers. */

import type { RleMask } from "./api.js";

/** Inclusive pixel bounds of a mask. */
export interface Bounds {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Expand row-major alternating runs into a flat 0/1 byte per pixel. */
export function decodeRle(rle: RleMask): Uint8Array {
  const [h, w] = rle.size;
  const total = h * w;
  const out = new Uint8Array(total);
  let value = rle.start ? 1 : 0;
  let pos = 0;
  for (const run of rle.runs) {
    if (run < 0 || pos + run > total) {
      throw new Error(`run lengths overflow ${total} pixels`);
    }
    if (value) out.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  if (pos !== total) {
    throw new Error(`run lengths cover ${pos} of ${total} pixels`);
  }
  return out;
}

/** Bounding box of the set pixels, or null for an empty mask. */
export function maskBounds(mask: Uint8Array, width: number, height: number): Bounds | null {
  let x0 = width, y0 = height, x1 = -1, y1 = -1;
  for (let y = 0; y < height; y++) {
    const row = y * width;
    for (let x = 0; x < width; x++) {
      if (!mask[row + x]) continue;
      if (x < x0) x0 = x;
      if (x > x1) x1 = x;
      if (y < y0) y0 = y;
      if (y > y1) y1 = y;
    }
  }
  return x1 < 0 ? null : { x0, y0, x1, y1 };
}
