/**
 * Image decoding for face-crop frames: PNG via pngjs, PPM (P6) and PGM (P5)
 * natively. Pixels come out as planar-free interleaved RGB floats in [0, 1].
 */

import { readFileSync } from 'node:fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** interleaved r,g,b in [0,1], length = width * height * 3 */
  data: Float32Array
}

export class ImageDecodeError extends Error {}

function decodePng(buf: Buffer): RgbImage {
  const png = PNG.sync.read(buf)
  const n = png.width * png.height
  const data = new Float32Array(n * 3)
  for (let i = 0; i < n; i++) {
    data[i * 3] = png.data[i * 4] / 255
    data[i * 3 + 1] = png.data[i * 4 + 1] / 255
    data[i * 3 + 2] = png.data[i * 4 + 2] / 255
  }
  return { width: png.width, height: png.height, data }
}

/** Parse the ASCII header of a P5/P6 netpbm file; returns fields + offset. */
function parseNetpbmHeader(buf: Buffer): {
  magic: string
  width: number
  height: number
  maxval: number
  offset: number
} {
  let pos = 2 // past magic
  const fields: number[] = []
  while (fields.length < 3) {
    if (pos >= buf.length) throw new ImageDecodeError('truncated netpbm header')
    const ch = String.fromCharCode(buf[pos])
    if (ch === '#') {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      pos++
    } else if (/\s/.test(ch)) {
      pos++
    } else {
      let token = ''
      while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) {
        token += String.fromCharCode(buf[pos])
        pos++
      }
      const value = Number(token)
      if (!Number.isInteger(value) || value <= 0) {
        throw new ImageDecodeError(`bad netpbm header token ${token}`)
      }
      fields.push(value)
    }
  }
  pos++ // single whitespace after maxval
  return {
    magic: buf.toString('ascii', 0, 2),
    width: fields[0],
    height: fields[1],
    maxval: fields[2],
    offset: pos,
  }
}

function decodeNetpbm(buf: Buffer): RgbImage {
  const { magic, width, height, maxval, offset } = parseNetpbmHeader(buf)
  if (maxval > 255) throw new ImageDecodeError('16-bit netpbm not supported')
  const n = width * height
  const channels = magic === 'P6' ? 3 : 1
  if (buf.length < offset + n * channels) {
    throw new ImageDecodeError('truncated netpbm payload')
  }
  const data = new Float32Array(n * 3)
  for (let i = 0; i < n; i++) {
    if (channels === 3) {
      data[i * 3] = buf[offset + i * 3] / maxval
      data[i * 3 + 1] = buf[offset + i * 3 + 1] / maxval
      data[i * 3 + 2] = buf[offset + i * 3 + 2] / maxval
    } else {
      const v = buf[offset + i] / maxval
      data[i * 3] = v
      data[i * 3 + 1] = v
      data[i * 3 + 2] = v
    }
  }
  return { width, height, data }
}

export function decodeImage(path: string): RgbImage {
  const buf = readFileSync(path)
  if (buf.length >= 8 && buf.readUInt32BE(0) === 0x89504e47) return decodePng(buf)
  const magic = buf.toString('ascii', 0, 2)
  if (magic === 'P6' || magic === 'P5') return decodeNetpbm(buf)
  throw new ImageDecodeError(`unsupported image format in ${path}`)
}

/** Deterministic preprocessing: center-crop to square, bilinear resize. */
export function centerCropResize(image: RgbImage, size: number): RgbImage {
  const side = Math.min(image.width, image.height)
  const x0 = Math.floor((image.width - side) / 2)
  const y0 = Math.floor((image.height - side) / 2)
  const out = new Float32Array(size * size * 3)
  const scale = side / size
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const srcX = x0 + Math.min((x + 0.5) * scale - 0.5, side - 1)
      const srcY = y0 + Math.min((y + 0.5) * scale - 0.5, side - 1)
      const xi = Math.max(Math.floor(srcX), x0)
      const yi = Math.max(Math.floor(srcY), y0)
      const xf = Math.min(xi + 1, x0 + side - 1)
      const yf = Math.min(yi + 1, y0 + side - 1)
      const tx = Math.max(srcX - xi, 0)
      const ty = Math.max(srcY - yi, 0)
      for (let c = 0; c < 3; c++) {
        const p00 = image.data[(yi * image.width + xi) * 3 + c]
        const p01 = image.data[(yi * image.width + xf) * 3 + c]
        const p10 = image.data[(yf * image.width + xi) * 3 + c]
        const p11 = image.data[(yf * image.width + xf) * 3 + c]
        const top = p00 * (1 - tx) + p01 * tx
        const bottom = p10 * (1 - tx) + p11 * tx
        out[(y * size + x) * 3 + c] = top * (1 - ty) + bottom * ty
      }
    }
  }
  return { width: size, height: size, data: out }
}
