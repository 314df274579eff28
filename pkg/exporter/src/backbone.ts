import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export type Backbone = {
  name: string
  width: number
  /** Maps a [batch, size, size, 3] tensor to pooled [batch, width] features. */
  run(batch: tf.Tensor4D): tf.Tensor2D
}

/** Per-channel normalization applied after scaling pixels to [0, 1]. */
export const CHANNEL_MEAN = [0.485, 0.456, 0.406]
export const CHANNEL_STD = [0.229, 0.224, 0.225]

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function seededNormals(count: number, scale: number, rand: () => number): Float32Array {
  const out = new Float32Array(count)
  for (let i = 0; i < count; i += 2) {
    const u = Math.max(rand(), 1e-12)
    const v = rand()
    const r = Math.sqrt(-2 * Math.log(u))
    out[i] = r * Math.cos(2 * Math.PI * v) * scale
    if (i + 1 < count) {
      out[i + 1] = r * Math.sin(2 * Math.PI * v) * scale
    }
  }
  return out
}

/**
 * A small strided conv stack with deterministic seeded weights and a
 * global average pool. It is not pretrained; it exists so feature export
 * is fully reproducible in environments where real pretrained weights
 * cannot be downloaded. Any fixed random projection of this form still
 * yields geometry-preserving features, which is all the downstream
 * toolchain needs from a frozen extractor.
 */
export function builtinBackbone(width: number, seed = 2024): Backbone {
  const channels = [3, 16, 32, width]
  const rand = mulberry32(seed)
  const kernels = [] as tf.Tensor4D[]
  for (let layer = 0; layer + 1 < channels.length; layer++) {
    const [cIn, cOut] = [channels[layer], channels[layer + 1]]
    const fanIn = 3 * 3 * cIn
    const values = seededNormals(3 * 3 * cIn * cOut, Math.sqrt(2 / fanIn), rand)
    kernels.push(tf.tensor4d(values, [3, 3, cIn, cOut]))
  }
  return {
    name: `builtin-cnn-${width}`,
    width,
    run(batch) {
      return tf.tidy(() => {
        let x: tf.Tensor4D = batch
        for (const kernel of kernels) {
          x = tf.relu(tf.conv2d(x, kernel, 2, 'same'))
        }
        return tf.mean(x, [1, 2]) as tf.Tensor2D
      })
    },
  }
}

/** IO handler that reads a tfjs model.json and its weight shards from disk. */
function fileLoadHandler(modelJsonPath: string): tf.io.IOHandler {
  return {
    async load() {
      const dir = path.dirname(modelJsonPath)
      const modelJson = JSON.parse(fs.readFileSync(modelJsonPath, 'utf8'))
      const manifest = modelJson.weightsManifest ?? []
      const specs: tf.io.WeightsManifestEntry[] = []
      const buffers: Buffer[] = []
      for (const group of manifest) {
        specs.push(...group.weights)
        for (const shard of group.paths) {
          buffers.push(fs.readFileSync(path.join(dir, shard)))
        }
      }
      const data = Buffer.concat(buffers)
      return {
        modelTopology: modelJson.modelTopology,
        format: modelJson.format,
        generatedBy: modelJson.generatedBy,
        convertedBy: modelJson.convertedBy,
        weightSpecs: specs,
        weightData: data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength),
      }
    },
  }
}

/** Load a local tfjs model directory (graph or layers format). */
export async function directoryBackbone(dir: string): Promise<Backbone> {
  const modelJson = path.join(dir, 'model.json')
  if (!fs.existsSync(modelJson)) {
    throw new Error(`no model.json under ${dir}`)
  }
  let model: tf.GraphModel | tf.LayersModel
  try {
    model = await tf.loadGraphModel(fileLoadHandler(modelJson))
  } catch {
    model = await tf.loadLayersModel(fileLoadHandler(modelJson))
  }
  const probeWidth = { value: 0 }
  const run = (batch: tf.Tensor4D) =>
    tf.tidy(() => {
      const raw = (model as tf.GraphModel).predict
        ? ((model as tf.GraphModel).predict(batch) as tf.Tensor)
        : ((model as tf.LayersModel).apply(batch) as tf.Tensor)
      // pool any remaining spatial dimensions so the output is [batch, d]
      const pooled = raw.rank === 4 ? tf.mean(raw, [1, 2]) : raw
      probeWidth.value = pooled.shape[pooled.shape.length - 1] as number
      return pooled as tf.Tensor2D
    })
  // one probe pass to discover the feature width
  const probe = run(tf.zeros([1, 32, 32, 3]))
  probe.dispose()
  return { name: `dir:${dir}`, width: probeWidth.value, run }
}

export async function resolveBackbone(spec: string): Promise<Backbone> {
  const builtin = spec.match(/^builtin-cnn-(\d+)$/)
  if (builtin) {
    return builtinBackbone(parseInt(builtin[1], 10))
  }
  if (spec.startsWith('dir:')) {
    return directoryBackbone(spec.slice(4))
  }
  throw new Error(
    `unknown backbone ${spec}; expected builtin-cnn-<width> or dir:<path>`,
  )
}
