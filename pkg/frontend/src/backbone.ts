/**
 * Frozen backbones that pool a face crop into a fixed-width descriptor.
 *
 * `builtin:patchstat64` is a deterministic, dependency-free backbone: the
 * crop is resized to 32x32 and pooled over a 4x4 grid of cells, each cell
 * contributing its mean R/G/B and mean luma gradient magnitude (64 values).
 * It exists so the full extraction pipeline runs and round-trips offline.
 *
 * `tfjs:<model-id>` loads a pretrained TensorFlow.js graph model when the
 * optional @tensorflow/tfjs-node runtime and weights are installed; without
 * them it fails with a clear model-load error.
 */

import { RgbImage, centerCropResize } from './image'

export class BackboneLoadError extends Error {}

export interface Backbone {
  readonly id: string
  /** descriptor dimensionality; FPK1 header dim must equal this */
  readonly width: number
  /** the head's elementwise affine, exported to the FPKA sidecar */
  readonly gamma: Float32Array
  readonly beta: Float32Array
  embed(batch: RgbImage[]): Promise<Float32Array[]>
}

const PATCH_GRID = 4
const CELL = 8
const INPUT_SIZE = PATCH_GRID * CELL

export class PatchStatBackbone implements Backbone {
  readonly id = 'builtin:patchstat64'
  readonly width = PATCH_GRID * PATCH_GRID * 4
  readonly gamma: Float32Array
  readonly beta: Float32Array

  constructor() {
    // no learned head: identity affine
    this.gamma = new Float32Array(this.width).fill(1)
    this.beta = new Float32Array(this.width)
  }

  async embed(batch: RgbImage[]): Promise<Float32Array[]> {
    return batch.map(image => this.embedOne(image))
  }

  private embedOne(image: RgbImage): Float32Array {
    const crop = centerCropResize(image, INPUT_SIZE)
    const out = new Float32Array(this.width)
    const luma = (x: number, y: number): number => {
      const i = (y * INPUT_SIZE + x) * 3
      return 0.299 * crop.data[i] + 0.587 * crop.data[i + 1] + 0.114 * crop.data[i + 2]
    }
    let k = 0
    for (let gy = 0; gy < PATCH_GRID; gy++) {
      for (let gx = 0; gx < PATCH_GRID; gx++) {
        let r = 0
        let g = 0
        let b = 0
        let grad = 0
        for (let y = gy * CELL; y < (gy + 1) * CELL; y++) {
          for (let x = gx * CELL; x < (gx + 1) * CELL; x++) {
            const i = (y * INPUT_SIZE + x) * 3
            r += crop.data[i]
            g += crop.data[i + 1]
            b += crop.data[i + 2]
            const dx = x + 1 < INPUT_SIZE ? luma(x + 1, y) - luma(x, y) : 0
            const dy = y + 1 < INPUT_SIZE ? luma(x, y + 1) - luma(x, y) : 0
            grad += Math.sqrt(dx * dx + dy * dy)
          }
        }
        const cells = CELL * CELL
        out[k++] = r / cells
        out[k++] = g / cells
        out[k++] = b / cells
        out[k++] = grad / cells
      }
    }
    return out
  }
}

class TfjsBackbone implements Backbone {
  readonly gamma: Float32Array
  readonly beta: Float32Array

  constructor(
    readonly id: string,
    readonly width: number,
    private readonly tf: any,
    private readonly model: any,
    private readonly inputSize: number,
  ) {
    // graph models do not expose their head affine; export identity and let
    // deployments with known head weights overwrite the sidecar
    this.gamma = new Float32Array(width).fill(1)
    this.beta = new Float32Array(width)
  }

  async embed(batch: RgbImage[]): Promise<Float32Array[]> {
    const tf = this.tf
    const size = this.inputSize
    const data = new Float32Array(batch.length * size * size * 3)
    batch.forEach((image, i) => {
      data.set(centerCropResize(image, size).data, i * size * size * 3)
    })
    const input = tf.tensor4d(data, [batch.length, size, size, 3])
    let output = this.model.predict(input)
    if (Array.isArray(output)) output = output[0]
    if (output.rank === 4) {
      output = tf.mean(output, [1, 2]) // global average pool spatial dims
    }
    const values = await output.data()
    input.dispose()
    output.dispose()
    const rows: Float32Array[] = []
    for (let i = 0; i < batch.length; i++) {
      rows.push(Float32Array.from(values.slice(i * this.width, (i + 1) * this.width)))
    }
    return rows
  }
}

async function loadTfjsBackbone(modelId: string): Promise<Backbone> {
  let tf: any
  try {
    tf = await import('@tensorflow/tfjs-node' as string)
  } catch {
    throw new BackboneLoadError(
      `model load failure: @tensorflow/tfjs-node is not installed ` +
        `(needed for backbone tfjs:${modelId}); install it or use builtin:patchstat64`,
    )
  }
  const url = process.env.TFJS_MODEL_URL
  if (!url) {
    throw new BackboneLoadError(
      `model load failure: set TFJS_MODEL_URL to a graph-model location for tfjs:${modelId}`,
    )
  }
  const inputSize = Number(process.env.TFJS_INPUT_SIZE ?? 224)
  let model: any
  try {
    model = await tf.loadGraphModel(/^https?:/.test(url) ? url : `file://${url}`)
  } catch (err) {
    throw new BackboneLoadError(`model load failure: ${String(err)}`)
  }
  // probe descriptor width with one dummy forward pass
  const probe = tf.zeros([1, inputSize, inputSize, 3])
  let out = model.predict(probe)
  if (Array.isArray(out)) out = out[0]
  if (out.rank === 4) out = tf.mean(out, [1, 2])
  const width = out.shape[out.shape.length - 1]
  probe.dispose()
  out.dispose()
  return new TfjsBackbone(`tfjs:${modelId}`, width, tf, model, inputSize)
}

export async function loadBackbone(id: string): Promise<Backbone> {
  if (id === 'builtin:patchstat64' || id === 'patchstat64') {
    return new PatchStatBackbone()
  }
  if (id.startsWith('tfjs:')) {
    return loadTfjsBackbone(id.slice('tfjs:'.length))
  }
  throw new BackboneLoadError(`unknown backbone id ${id}`)
}
