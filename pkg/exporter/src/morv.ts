// MORV binary embedding files, little-endian:
//   "MORV" (4) | u32 version = 1 | u32 dim | u64 count | count*dim float32 row-major
// Sidecar "<file>.ids" is UTF-8, one id per line, row-aligned.

import { closeSync, openSync, readFileSync, writeFileSync, writeSync } from 'node:fs';

export const MORV_MAGIC = 'MORV';
export const MORV_VERSION = 1;
export const HEADER_BYTES = 20;

export function packHeader(dim: number, count: number): Buffer {
  const header = Buffer.alloc(HEADER_BYTES);
  header.write(MORV_MAGIC, 0, 'ascii');
  header.writeUInt32LE(MORV_VERSION, 4);
  header.writeUInt32LE(dim, 8);
  header.writeBigUInt64LE(BigInt(count), 12);
  return header;
}

// Streaming writer: rows are appended in call order so row i always matches
// input line i and sidecar line i.
export class MorvWriter {
  private fd: number;
  private ids: string[] = [];
  private readonly path: string;
  readonly dim: number;

  constructor(path: string, dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`dim must be a positive integer, got ${dim}`);
    }
    this.path = path;
    this.dim = dim;
    this.fd = openSync(path, 'w');
    writeSync(this.fd, packHeader(dim, 0)); // count patched on close
  }

  append(id: string, vector: Float32Array): void {
    if (vector.length !== this.dim) {
      throw new Error(`vector for ${id} has dim ${vector.length}, expected ${this.dim}`);
    }
    for (const v of vector) {
      if (!Number.isFinite(v)) throw new Error(`non-finite value in vector for ${id}`);
    }
    const row = Buffer.alloc(4 * this.dim);
    for (let i = 0; i < this.dim; i++) row.writeFloatLE(vector[i], 4 * i);
    writeSync(this.fd, row);
    this.ids.push(id);
  }

  close(): number {
    writeSync(this.fd, packHeader(this.dim, this.ids.length), 0, HEADER_BYTES, 0);
    closeSync(this.fd);
    writeFileSync(`${this.path}.ids`, this.ids.map((id) => `${id}\n`).join(''), 'utf-8');
    return this.ids.length;
  }
}

export interface MorvFile {
  dim: number;
  count: number;
  vectors: Float32Array; // count * dim, row-major
  ids: string[];
}

export function readMorv(path: string): MorvFile {
  const raw = readFileSync(path);
  if (raw.length < HEADER_BYTES) throw new Error(`${path}: shorter than MORV header`);
  if (raw.toString('ascii', 0, 4) !== MORV_MAGIC) {
    throw new Error(`${path}: bad magic ${raw.toString('ascii', 0, 4)}`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== MORV_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const dim = raw.readUInt32LE(8);
  const count = Number(raw.readBigUInt64LE(12));
  const expected = HEADER_BYTES + count * dim * 4;
  if (raw.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes, got ${raw.length}`);
  }
  // copy to an aligned buffer: Buffer slices may start at arbitrary offsets
  const payload = Buffer.alloc(count * dim * 4);
  raw.copy(payload, 0, HEADER_BYTES);
  const vectors = new Float32Array(payload.buffer, 0, count * dim);

  const ids = readFileSync(`${path}.ids`, 'utf-8').split('\n').filter((s) => s.length > 0);
  if (ids.length !== count) {
    throw new Error(`${path}.ids: ${ids.length} ids for ${count} rows`);
  }
  return { dim, count, vectors, ids };
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) return 0;
  return dot / Math.sqrt(na) / Math.sqrt(nb);
}
