export { MORV_MAGIC, MORV_VERSION, HEADER_BYTES, MorvWriter, readMorv, cosine } from './morv.js';
export { HashedNgramEncoder, CHECKPOINTS, resolveEncoder } from './encoders.js';
export type { Encoder } from './encoders.js';
export { readItems, runExport } from './export.js';
export type { ExportJob, ExportItem } from './export.js';
