/** Wire types for the partguide annotation service HTTP API. */

export interface PatchInfo {
  image_id: string;
  patch_index: number;
  /** [x0, y0, x1, y1] in image pixel coordinates, x1/y1 exclusive. */
  box: [number, number, number, number];
  image_width: number;
  image_height: number;
  thumbnail: string;
}

export interface PrototypeSummary {
  id: number;
  score: number;
  member_count: number;
  members: PatchInfo[];
  done: boolean;
}

export interface PrototypeListing {
  part: string;
  prototypes: PrototypeSummary[];
}

export interface LabelSubmission {
  prototype_id: number;
  part_class: string;
  bulk_label: 0 | 1;
  exceptions: number[];
  annotator: string;
}

export interface StoredRecord {
  prototype_id: number;
  part_class: string;
  bulk_label: number;
  exceptions: number[];
  clicks: number;
  source: string;
  annotator: string;
  timestamp: string;
}

export interface Progress {
  part: string;
  done: number;
  total: number;
}
