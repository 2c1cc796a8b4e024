// Batch export: JSON-Lines text collections in, MORV file + ids sidecar out.

import { readFileSync } from 'node:fs';

import { Encoder } from './encoders.js';
import { MorvWriter } from './morv.js';

export interface ExportJob {
  model: string;
  inputPath: string;
  outputPath: string;
  batchSize: number;
  normalize: boolean;
}

export interface ExportItem {
  id: string;
  text: string;
  line: number;
}

// Accepts corpus/query lines {"id", "text"} and decomposition lines
// {"id", "units": [{"id", "text"}, ...]}, flattening the latter so
// proposition and sub-query files export directly.
export function readItems(path: string): ExportItem[] {
  const items: ExportItem[] = [];
  const seen = new Set<string>();
  const lines = readFileSync(path, 'utf-8').split('\n');
  lines.forEach((line, index) => {
    const lineNo = index + 1;
    if (line.trim().length === 0) return;
    let obj: any;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new Error(`${path}:${lineNo}: malformed JSON line`);
    }
    const push = (id: unknown, text: unknown) => {
      if (typeof id !== 'string' || id.length === 0) {
        throw new Error(`${path}:${lineNo}: missing or empty id`);
      }
      if (typeof text !== 'string' || text.length === 0) {
        throw new Error(`${path}:${lineNo}: missing or empty text for ${id}`);
      }
      if (seen.has(id)) throw new Error(`${path}:${lineNo}: duplicate id ${id}`);
      seen.add(id);
      items.push({ id, text, line: lineNo });
    };
    if (Array.isArray(obj.units)) {
      for (const unit of obj.units) push(unit?.id, unit?.text);
    } else {
      push(obj.id, obj.text);
    }
  });
  if (items.length === 0) throw new Error(`${path}: no items to export`);
  return items;
}

export async function runExport(
  job: ExportJob,
  encoder: Encoder,
): Promise<{ count: number; dim: number }> {
  const items = readItems(job.inputPath);

  // encode the first batch before opening the output so the header dim is known
  let writer: MorvWriter | null = null;
  for (let start = 0; start < items.length; start += job.batchSize) {
    const batch = items.slice(start, start + job.batchSize);
    let vectors: Float32Array[];
    try {
      vectors = await encoder.encode(batch.map((item) => item.text));
    } catch (err) {
      writer?.close();
      const reason = err instanceof Error ? err.message : String(err);
      throw new Error(
        `encode failed at ${job.inputPath}:${batch[0].line} (${batch[0].id}): ${reason}`,
      );
    }
    if (writer === null) writer = new MorvWriter(job.outputPath, vectors[0].length);
    batch.forEach((item, i) => writer!.append(item.id, vectors[i]));
  }
  const count = writer!.close();
  return { count, dim: writer!.dim };
}
