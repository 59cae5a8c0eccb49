/**
 * Walk a directory of per-video frame folders, run the frozen backbone in
 * batches, and emit the three interchange files the evaluation harness
 * consumes: FPK1 features, a CSV manifest, and the FPKA affine sidecar.
 *
 * Layout: <imageRoot>/<videoDir>/<frame files>. The video id is the folder
 * name; the label comes from a labels CSV (video_id,label,manipulation) or,
 * as a fallback, from a "<MANIP>__<name>" folder-name convention where
 * MANIP=REAL means label 0. Unreadable frames are skipped and logged; row
 * order is sorted folders then sorted frames, matching the manifest.
 */

import { readFileSync, readdirSync, statSync } from 'node:fs'
import { basename, join } from 'node:path'

import { Backbone } from './backbone'
import { ManifestRow, writeAffine, writeFeatures, writeManifest } from './fpk'
import { ImageDecodeError, RgbImage, decodeImage } from './image'

export interface ExtractionJob {
  imageRoot: string
  backbone: Backbone
  outFeatures: string
  outManifest: string
  outAffine: string
  batchSize: number
  source: string
  split: 'train' | 'val' | 'test'
  labelsFile?: string
  seed?: number
  log?: (message: string) => void
}

export interface ExtractionResult {
  frames: number
  videos: number
  skipped: number
  dim: number
}

interface VideoLabel {
  label: 0 | 1
  manipulation: string
}

const IMAGE_EXTENSIONS = new Set(['.png', '.ppm', '.pgm'])

function parseLabelsFile(path: string): Map<string, VideoLabel> {
  const out = new Map<string, VideoLabel>()
  const lines = readFileSync(path, 'utf-8').split('\n')
  for (const raw of lines) {
    const line = raw.trim()
    if (!line || line.startsWith('#') || line.startsWith('video_id,')) continue
    const parts = line.split(',')
    if (parts.length !== 3) throw new Error(`labels file line not video_id,label,manipulation: ${line}`)
    const label = Number(parts[1])
    if (label !== 0 && label !== 1) throw new Error(`label must be 0/1: ${line}`)
    out.set(parts[0], { label: label as 0 | 1, manipulation: parts[2] })
  }
  return out
}

function labelFromFolderName(name: string): VideoLabel {
  const sep = name.indexOf('__')
  const manipulation = (sep > 0 ? name.slice(0, sep) : 'REAL').toUpperCase()
  return { label: manipulation === 'REAL' ? 0 : 1, manipulation }
}

function listVideoDirs(root: string): string[] {
  return readdirSync(root)
    .filter(name => statSync(join(root, name)).isDirectory())
    .sort()
}

function listFrames(dir: string): string[] {
  return readdirSync(dir)
    .filter(name => {
      const dot = name.lastIndexOf('.')
      return dot >= 0 && IMAGE_EXTENSIONS.has(name.slice(dot).toLowerCase())
    })
    .sort()
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  const log = job.log ?? ((m: string) => console.error(m))
  const labels = job.labelsFile ? parseLabelsFile(job.labelsFile) : undefined
  const backbone = job.backbone

  const pending: { image: RgbImage; video: string; labelInfo: VideoLabel }[] = []
  const features: Float32Array[] = []
  const rows: ManifestRow[] = []
  const videosSeen = new Set<string>()
  let skipped = 0

  const flush = async () => {
    if (!pending.length) return
    const embedded = await backbone.embed(pending.map(p => p.image))
    embedded.forEach((vector, i) => {
      const { video, labelInfo } = pending[i]
      rows.push({
        rowIndex: rows.length,
        videoId: video,
        label: labelInfo.label,
        manipulation: labelInfo.manipulation,
        source: job.source,
        split: job.split,
      })
      features.push(vector)
    })
    pending.length = 0
  }

  for (const videoDir of listVideoDirs(job.imageRoot)) {
    const labelInfo = labels?.get(videoDir) ?? labelFromFolderName(videoDir)
    for (const frame of listFrames(join(job.imageRoot, videoDir))) {
      const path = join(job.imageRoot, videoDir, frame)
      let image: RgbImage
      try {
        image = decodeImage(path)
      } catch (err) {
        if (err instanceof ImageDecodeError) {
          skipped += 1
          log(`skipping unreadable frame ${path}: ${err.message}`)
          continue
        }
        throw err
      }
      videosSeen.add(basename(videoDir))
      pending.push({ image, video: videoDir, labelInfo })
      if (pending.length >= job.batchSize) await flush()
    }
  }
  await flush()

  if (!rows.length) throw new Error(`no decodable frames under ${job.imageRoot}`)
  writeFeatures(job.outFeatures, features, backbone.width)
  writeManifest(job.outManifest, rows, job.seed ?? 0)
  writeAffine(job.outAffine, backbone.gamma, backbone.beta)
  return {
    frames: rows.length,
    videos: videosSeen.size,
    skipped,
    dim: backbone.width,
  }
}
