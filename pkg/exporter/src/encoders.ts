// Text encoders. The built-in hashed n-gram encoder is fully deterministic
// and needs no downloads; named checkpoints go through @xenova/transformers
// when that package is installed.

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  encode(texts: string[]): Promise<Float32Array[]>;
}

const TOKEN_RE = /[a-z0-9_]+/g;

// FNV-1a 32-bit
function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export class HashedNgramEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  private readonly normalize: boolean;

  constructor(dim = 256, normalize = true) {
    this.dim = dim;
    this.normalize = normalize;
    this.name = `hash-${dim}`;
  }

  private embed(text: string): Float32Array {
    const vec = new Float32Array(this.dim);
    const tokens = text.toLowerCase().match(TOKEN_RE) ?? [];
    const feed = (feature: string) => {
      const h = fnv1a(feature);
      const sign = (h & 1) === 0 ? 1 : -1;
      vec[(h >>> 1) % this.dim] += sign;
    };
    for (const token of tokens) feed(token);
    for (let i = 0; i + 1 < tokens.length; i++) feed(`${tokens[i]} ${tokens[i + 1]}`);
    if (this.normalize) {
      let norm = 0;
      for (const v of vec) norm += v * v;
      norm = Math.sqrt(norm);
      if (norm > 0) for (let i = 0; i < this.dim; i++) vec[i] /= norm;
    }
    return vec;
  }

  async encode(texts: string[]): Promise<Float32Array[]> {
    return texts.map((t) => this.embed(t));
  }
}

interface CheckpointSpec {
  repo: string;
  pooling: 'mean' | 'cls';
}

// User-facing model names mapped to their public checkpoints and the
// pooling each checkpoint's published usage calls for.
export const CHECKPOINTS: Record<string, CheckpointSpec> = {
  simcse: { repo: 'princeton-nlp/unsup-simcse-bert-base-uncased', pooling: 'cls' },
  contriever: { repo: 'facebook/contriever', pooling: 'mean' },
  'dpr-context': { repo: 'facebook/dpr-ctx_encoder-multiset-base', pooling: 'cls' },
  'dpr-question': { repo: 'facebook/dpr-question_encoder-multiset-base', pooling: 'cls' },
  'ance-context': { repo: 'castorini/ance-dpr-context-multi', pooling: 'cls' },
  'ance-question': { repo: 'castorini/ance-dpr-question-multi', pooling: 'cls' },
  'tas-b': { repo: 'sentence-transformers/msmarco-distilbert-base-tas-b', pooling: 'cls' },
  gtr: { repo: 'sentence-transformers/gtr-t5-base', pooling: 'mean' },
  mpnet: { repo: 'sentence-transformers/all-mpnet-base-v2', pooling: 'mean' },
};

class TransformerEncoder implements Encoder {
  readonly name: string;
  dim = 0; // known after the first batch
  private readonly spec: CheckpointSpec;
  private readonly normalize: boolean;
  private pipe: any;

  constructor(name: string, spec: CheckpointSpec, normalize: boolean) {
    this.name = name;
    this.spec = spec;
    this.normalize = normalize;
  }

  private async load(): Promise<any> {
    if (!this.pipe) {
      let transformers: any;
      try {
        transformers = await import('@xenova/transformers' as string);
      } catch {
        throw new Error(
          `model ${this.name} needs @xenova/transformers; ` +
            `install it or use the built-in "hash" encoder`,
        );
      }
      this.pipe = await transformers.pipeline('feature-extraction', this.spec.repo);
    }
    return this.pipe;
  }

  async encode(texts: string[]): Promise<Float32Array[]> {
    const pipe = await this.load();
    const out: Float32Array[] = [];
    for (const text of texts) {
      const tensor = await pipe(text, {
        pooling: this.spec.pooling,
        normalize: this.normalize,
      });
      const vec = Float32Array.from(tensor.data as Iterable<number>);
      if (this.dim === 0) this.dim = vec.length;
      out.push(vec);
    }
    return out;
  }
}

// "hash", "hash:512", or a checkpoint name from the registry.
export function resolveEncoder(model: string, normalize: boolean): Encoder {
  if (model === 'hash' || model.startsWith('hash:')) {
    const dim = model.includes(':') ? Number.parseInt(model.split(':')[1], 10) : 256;
    if (!Number.isInteger(dim) || dim < 1) throw new Error(`bad hash dim in ${model}`);
    return new HashedNgramEncoder(dim, normalize);
  }
  const spec = CHECKPOINTS[model];
  if (!spec) {
    const known = ['hash', 'hash:<dim>', ...Object.keys(CHECKPOINTS)].join(', ');
    throw new Error(`unknown model ${model}; known: ${known}`);
  }
  return new TransformerEncoder(model, spec, normalize);
}
