/**
 * Writers for the featprobe interchange formats.
 *
 * FPK1 feature file, all little-endian:
 *   magic "FPK1" | u32 version=1 | u64 n_rows | u32 dim | u32 dtype=0 |
 *   n_rows*dim float32 payload | 32-byte sha256 of the payload
 *
 * FPKA affine sidecar:
 *   magic "FPKA" | u32 dim | dim float32 gamma | dim float32 beta
 *
 * Manifest CSV: header row, one line per frame, then footer comments
 * "# seed=<u64>" and "# sha256=<hex>" where the hash covers the data lines.
 */

import { createHash } from 'node:crypto'
import { mkdirSync, renameSync, writeFileSync } from 'node:fs'
import { dirname, join } from 'node:path'

export const MANIFEST_HEADER = 'row_index,video_id,label,manipulation,source,split'

export interface ManifestRow {
  rowIndex: number
  videoId: string
  label: 0 | 1
  manipulation: string
  source: string
  split: 'train' | 'val' | 'test'
}

function atomicWrite(path: string, data: Buffer | string): void {
  mkdirSync(dirname(path), { recursive: true })
  const tmp = join(dirname(path), `.${process.pid}.${Date.now()}.tmp`)
  writeFileSync(tmp, data)
  renameSync(tmp, path)
}

export function encodeFeatures(rows: Float32Array[], dim: number): Buffer {
  for (const row of rows) {
    if (row.length !== dim) {
      throw new Error(`feature row of length ${row.length}, expected ${dim}`)
    }
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error('non-finite feature value')
    }
  }
  const header = Buffer.alloc(24)
  header.write('FPK1', 0, 'ascii')
  header.writeUInt32LE(1, 4)
  header.writeBigUInt64LE(BigInt(rows.length), 8)
  header.writeUInt32LE(dim, 16)
  header.writeUInt32LE(0, 20) // dtype code 0 = float32
  const payload = Buffer.alloc(rows.length * dim * 4)
  let off = 0
  for (const row of rows) {
    for (let j = 0; j < dim; j++) {
      payload.writeFloatLE(row[j], off)
      off += 4
    }
  }
  const digest = createHash('sha256').update(payload).digest()
  return Buffer.concat([header, payload, digest])
}

export function writeFeatures(path: string, rows: Float32Array[], dim: number): void {
  atomicWrite(path, encodeFeatures(rows, dim))
}

export function encodeAffine(gamma: Float32Array, beta: Float32Array): Buffer {
  if (gamma.length !== beta.length) throw new Error('gamma/beta length mismatch')
  const dim = gamma.length
  const buf = Buffer.alloc(8 + dim * 8)
  buf.write('FPKA', 0, 'ascii')
  buf.writeUInt32LE(dim, 4)
  for (let j = 0; j < dim; j++) buf.writeFloatLE(gamma[j], 8 + j * 4)
  for (let j = 0; j < dim; j++) buf.writeFloatLE(beta[j], 8 + dim * 4 + j * 4)
  return buf
}

export function writeAffine(path: string, gamma: Float32Array, beta: Float32Array): void {
  atomicWrite(path, encodeAffine(gamma, beta))
}

const TOKEN = /^[A-Za-z0-9][A-Za-z0-9._:-]*$/

export function encodeManifest(rows: ManifestRow[], seed: number | bigint): string {
  const lines: string[] = []
  rows.forEach((row, i) => {
    if (row.rowIndex !== i) throw new Error(`row_index ${row.rowIndex} out of order`)
    for (const token of [row.videoId, row.manipulation, row.source]) {
      if (!TOKEN.test(token)) throw new Error(`invalid manifest token: ${token}`)
    }
    if ((row.label === 0) !== (row.manipulation === 'REAL')) {
      throw new Error(`label ${row.label} contradicts manipulation ${row.manipulation}`)
    }
    lines.push(
      `${row.rowIndex},${row.videoId},${row.label},${row.manipulation},${row.source},${row.split}`,
    )
  })
  const body = lines.map(l => l + '\n').join('')
  const hash = createHash('sha256').update(body, 'utf-8').digest('hex')
  return `${MANIFEST_HEADER}\n${body}# seed=${seed}\n# sha256=${hash}\n`
}

export function writeManifest(path: string, rows: ManifestRow[], seed: number | bigint): void {
  atomicWrite(path, encodeManifest(rows, seed))
}
