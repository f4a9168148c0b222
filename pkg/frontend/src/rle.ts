/** Thumbnail codec: "res|n0,n1,..." run lengths alternating empty/solid,
 * row-major, starting with an empty run. */

export interface DecodedBitmap {
  resolution: number;
  cells: Uint8Array; // row-major, 1 = solid
}

export function decodeRle(rle: string): DecodedBitmap {
  const bar = rle.indexOf("|");
  if (bar <= 0) {
    throw new Error(`malformed RLE: ${rle.slice(0, 24)}`);
  }
  const resolution = Number(rle.slice(0, bar));
  if (!Number.isInteger(resolution) || resolution <= 0) {
    throw new Error(`bad RLE resolution: ${rle.slice(0, bar)}`);
  }
  const total = resolution * resolution;
  const cells = new Uint8Array(total);
  let pos = 0;
  let solid = 0;
  for (const token of rle.slice(bar + 1).split(",")) {
    const run = Number(token);
    if (!Number.isInteger(run) || run < 0) {
      throw new Error(`bad RLE run: ${token}`);
    }
    if (solid) {
      cells.fill(1, pos, pos + run);
    }
    pos += run;
    solid = 1 - solid;
  }
  if (pos !== total) {
    throw new Error(`RLE covers ${pos} cells, expected ${total}`);
  }
  return { resolution, cells };
}

/** Paint a decoded bitmap into an RGBA buffer (dark cells on white). */
export function bitmapToImageData(
  bitmap: DecodedBitmap,
  rgba: Uint8ClampedArray
): void {
  const n = bitmap.resolution * bitmap.resolution;
  for (let i = 0; i < n; i++) {
    const v = bitmap.cells[i] ? 40 : 245;
    rgba[i * 4] = v;
    rgba[i * 4 + 1] = v;
    rgba[i * 4 + 2] = v;
    rgba[i * 4 + 3] = 255;
  }
}
