// Bounding boxes arrive in original-image pixels; the client scales them to
// whatever size the image is displayed at.

import type { RegionPayload } from "./types.js";

export interface ScaledBox {
  regionIndex: number;
  label: string;
  left: number;
  top: number;
  width: number;
  height: number;
}

export function scaleRegions(
  regions: RegionPayload[],
  original: { width: number; height: number },
  displayed: { width: number; height: number },
): ScaledBox[] {
  const sx = displayed.width / original.width;
  const sy = displayed.height / original.height;
  return regions.map((region) => ({
    regionIndex: region.region_index,
    label: region.label,
    left: region.box.x_min * sx,
    top: region.box.y_min * sy,
    width: (region.box.x_max - region.box.x_min) * sx,
    height: (region.box.y_max - region.box.y_min) * sy,
  }));
}
