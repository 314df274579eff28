import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'

import { Backbone, CHANNEL_MEAN, CHANNEL_STD, resolveBackbone } from './backbone'
import { decodeImage, scanImageFolder, LabeledImage } from './images'
import { encodeFset, FeatureSet } from './fset'

export type ExportSpec = {
  imagesDir: string
  backbone: string
  outFile: string
  /** side length images are resized to before inference */
  size?: number
  batchSize?: number
  log?: (message: string) => void
}

export type ExportSummary = {
  written: number
  skipped: string[]
  classCount: number
  featureWidth: number
}

function toBatchTensor(
  images: { pixels: Float32Array; width: number; height: number }[],
  size: number,
): tf.Tensor4D {
  return tf.tidy(() => {
    const resized = images.map(img => {
      const raw = tf.tensor3d(img.pixels, [img.height, img.width, 3])
      return tf.image.resizeBilinear(raw, [size, size])
    })
    const batch = tf.stack(resized) as tf.Tensor4D
    const mean = tf.tensor1d(CHANNEL_MEAN)
    const std = tf.tensor1d(CHANNEL_STD)
    return batch.sub(mean).div(std)
  })
}

async function embedBatch(
  backbone: Backbone,
  entries: LabeledImage[],
  size: number,
  skipped: string[],
  log: (message: string) => void,
): Promise<{ rows: Float32Array[]; labels: number[] }> {
  const decoded = []
  const labels: number[] = []
  for (const entry of entries) {
    try {
      decoded.push(decodeImage(entry.file))
      labels.push(entry.classIndex)
    } catch (err) {
      skipped.push(entry.file)
      log(`skipping unreadable image ${entry.file}: ${err}`)
    }
  }
  if (decoded.length === 0) {
    return { rows: [], labels: [] }
  }
  const batch = toBatchTensor(decoded, size)
  const features = backbone.run(batch)
  const data = await features.data()
  const width = features.shape[1]
  batch.dispose()
  features.dispose()
  const rows: Float32Array[] = []
  for (let i = 0; i < decoded.length; i++) {
    rows.push(Float32Array.from(data.subarray(i * width, (i + 1) * width)))
  }
  return { rows, labels }
}

/**
 * Run a frozen backbone over an image folder (one subdirectory per class)
 * and write the pooled features as an FSET1 file. Records are ordered by
 * class, then filename, so repeated exports are byte-identical.
 */
export async function exportFeatures(spec: ExportSpec): Promise<ExportSummary> {
  const size = spec.size ?? 224
  const batchSize = spec.batchSize ?? 16
  const log = spec.log ?? ((message: string) => console.error(message))
  const entries = scanImageFolder(spec.imagesDir)
  const classCount = Math.max(...entries.map(e => e.classIndex)) + 1
  const backbone = await resolveBackbone(spec.backbone)

  const features: Float32Array[] = []
  const labels: number[] = []
  const skipped: string[] = []
  for (let start = 0; start < entries.length; start += batchSize) {
    const chunk = entries.slice(start, start + batchSize)
    const { rows, labels: chunkLabels } = await embedBatch(
      backbone, chunk, size, skipped, log,
    )
    features.push(...rows)
    labels.push(...chunkLabels)
  }
  if (features.length === 0) {
    throw new Error('no readable images found')
  }
  const set: FeatureSet = { features, labels, classCount }
  fs.writeFileSync(spec.outFile, encodeFset(set))
  return {
    written: features.length,
    skipped,
    classCount,
    featureWidth: features[0].length,
  }
}
