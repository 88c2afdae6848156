// Feature-grid heatmap rendering: min-max normalized grayscale.

export interface HeatmapPixels {
  width: number;
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

/**
 * Convert a rows x cols grid into grayscale RGBA pixels.
 *
 * Values are min-max normalized; a constant grid renders uniform
 * mid-gray.  Returns null for an empty or ragged grid (callers hide
 * the panel).
 */
export function gridToPixels(grid: number[][]): HeatmapPixels | null {
  const rows = grid.length;
  if (rows === 0) return null;
  const cols = grid[0].length;
  if (cols === 0) return null;

  let min = Infinity;
  let max = -Infinity;
  for (const row of grid) {
    if (row.length !== cols) return null;
    for (const v of row) {
      if (!Number.isFinite(v)) return null;
      if (v < min) min = v;
      if (v > max) max = v;
    }
  }

  const span = max - min;
  const rgba = new Uint8ClampedArray(new ArrayBuffer(rows * cols * 4));
  let o = 0;
  for (const row of grid) {
    for (const v of row) {
      const shade = span === 0 ? 128 : Math.round(((v - min) / span) * 255);
      rgba[o] = shade;
      rgba[o + 1] = shade;
      rgba[o + 2] = shade;
      rgba[o + 3] = 255;
      o += 4;
    }
  }
  return { width: cols, height: rows, rgba };
}

/**
 * Paint the grid onto a canvas, one cell per pixel (CSS scales it up).
 * Returns false when the grid is unusable; the 2d context can be
 * unavailable in non-browser DOMs, in which case the canvas still gets
 * its cell dimensions.
 */
export function renderHeatmap(canvas: HTMLCanvasElement, grid: number[][]): boolean {
  const pixels = gridToPixels(grid);
  if (pixels === null) {
    console.warn("feature grid malformed; hiding heatmap panel");
    return false;
  }
  canvas.width = pixels.width;
  canvas.height = pixels.height;
  const ctx = canvas.getContext("2d");
  if (ctx) {
    ctx.putImageData(new ImageData(pixels.rgba, pixels.width, pixels.height), 0, 0);
  }
  return true;
}
