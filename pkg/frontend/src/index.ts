export { ApiClient, ApiError } from "./api.js";
export type { FetchLike } from "./api.js";
export { mountAnnotator } from "./app.js";
export { actionForKey, applyAction } from "./keyboard.js";
export type { SessionAction } from "./keyboard.js";
export { renderedClicks, ReviewSession } from "./session.js";
export type { PrototypeView, SessionEvents } from "./session.js";
export { drawPatchThumbnail, fitInCell, patchCropRect } from "./thumbnails.js";
export type { CropRect } from "./thumbnails.js";
export type * from "./types.js";
