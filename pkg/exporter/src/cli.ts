#!/usr/bin/env node
// Usage: morv-export export --model <name> --input <jsonl> --output <morv>
//        [--batch N] [--no-normalize]

import { resolveEncoder } from './encoders.js';
import { runExport } from './export.js';

function argValue(args: string[], flag: string): string | undefined {
  const at = args.indexOf(flag);
  return at !== -1 ? args[at + 1] : undefined;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...args] = argv;
  if (command !== 'export') {
    console.error('usage: morv-export export --model <name> --input <jsonl> --output <morv> [--batch N] [--no-normalize]');
    return 2;
  }
  const model = argValue(args, '--model');
  const input = argValue(args, '--input');
  const output = argValue(args, '--output');
  if (!model || !input || !output) {
    console.error('error: --model, --input, and --output are required');
    return 2;
  }
  const batch = Number.parseInt(argValue(args, '--batch') ?? '32', 10);
  if (!Number.isInteger(batch) || batch < 1) {
    console.error(`error: bad --batch value`);
    return 2;
  }
  const normalize = !args.includes('--no-normalize');
  try {
    const encoder = resolveEncoder(model, normalize);
    const { count, dim } = await runExport(
      { model, inputPath: input, outputPath: output, batchSize: batch, normalize },
      encoder,
    );
    console.log(`wrote ${output}: ${count} vectors, dim ${dim} (${encoder.name})`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith('cli.js') || process.argv[1]?.endsWith('cli.ts');
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
