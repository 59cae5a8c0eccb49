#!/usr/bin/env node
/**
 * featprobe-extract: run a frozen backbone over face-crop frame folders and
 * write FPK1 features, a CSV manifest, and the FPKA affine sidecar.
 */

import { parseArgs } from 'node:util'

import { BackboneLoadError, loadBackbone } from './backbone'
import { extract } from './extract'

const USAGE = `usage: featprobe-extract --images DIR --out-features F.fpk1 \\
    --out-manifest M.csv --out-affine A.fpka [options]

options:
  --images DIR          root directory of per-video frame folders (required)
  --backbone ID         builtin:patchstat64 (default) or tfjs:<model-id>
  --out-features PATH   FPK1 output (required)
  --out-manifest PATH   manifest CSV output (required)
  --out-affine PATH     FPKA gamma/beta sidecar output (required)
  --batch-size N        inference batch size (default 32)
  --source NAME         dataset name stamped into the manifest (default: images dir)
  --split NAME          train | val | test (default test)
  --labels PATH         CSV video_id,label,manipulation overriding folder names
  --seed N              seed recorded in the manifest footer (default 0)
`

export async function main(argv: string[]): Promise<number> {
  let parsed
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        backbone: { type: 'string', default: 'builtin:patchstat64' },
        'out-features': { type: 'string' },
        'out-manifest': { type: 'string' },
        'out-affine': { type: 'string' },
        'batch-size': { type: 'string', default: '32' },
        source: { type: 'string' },
        split: { type: 'string', default: 'test' },
        labels: { type: 'string' },
        seed: { type: 'string', default: '0' },
        help: { type: 'boolean', default: false },
      },
    })
  } catch (err) {
    console.error(String(err))
    console.error(USAGE)
    return 2
  }
  const v = parsed.values
  if (v.help) {
    console.log(USAGE)
    return 0
  }
  for (const key of ['images', 'out-features', 'out-manifest', 'out-affine'] as const) {
    if (!v[key]) {
      console.error(`missing required --${key}`)
      console.error(USAGE)
      return 2
    }
  }
  const split = v.split as string
  if (!['train', 'val', 'test'].includes(split)) {
    console.error(`--split must be train, val or test, got ${split}`)
    return 2
  }
  const batchSize = Number(v['batch-size'])
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    console.error(`--batch-size must be a positive integer`)
    return 2
  }
  try {
    const backbone = await loadBackbone(v.backbone as string)
    const result = await extract({
      imageRoot: v.images as string,
      backbone,
      outFeatures: v['out-features'] as string,
      outManifest: v['out-manifest'] as string,
      outAffine: v['out-affine'] as string,
      batchSize,
      source: (v.source as string | undefined) ?? 'extracted',
      split: split as 'train' | 'val' | 'test',
      labelsFile: v.labels as string | undefined,
      seed: Number(v.seed),
    })
    console.log(
      `extracted ${result.frames} frames / ${result.videos} videos ` +
        `(dim ${result.dim}, ${result.skipped} skipped) with ${backbone.id}`,
    )
    return 0
  } catch (err) {
    if (err instanceof BackboneLoadError) {
      console.error(err.message)
      return 3
    }
    console.error(String(err))
    return 1
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(code => {
    process.exitCode = code
  })
}
