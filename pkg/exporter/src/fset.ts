/**
 * FSET1 binary feature container.
 *
 * Layout (all integers little-endian):
 *   offset 0   magic  "FSET1"       (5 bytes)
 *   offset 5   format version u16   (currently 1)
 *   offset 7   n  u32
 *   offset 11  d  u32
 *   offset 15  C  u32
 *   offset 19  n records of { label u32, d x float32 }
 */

export const FSET_MAGIC = 'FSET1'
export const FSET_VERSION = 1
export const FSET_HEADER_BYTES = 19

export type FeatureSet = {
  features: Float32Array[]
  labels: number[]
  classCount: number
}

export function encodeFset(set: FeatureSet): Buffer {
  const n = set.features.length
  if (set.labels.length !== n) {
    throw new Error(`got ${n} feature rows but ${set.labels.length} labels`)
  }
  const d = n > 0 ? set.features[0].length : 0
  const recordBytes = 4 + 4 * d
  const out = Buffer.alloc(FSET_HEADER_BYTES + n * recordBytes)
  out.write(FSET_MAGIC, 0, 'ascii')
  out.writeUInt16LE(FSET_VERSION, 5)
  out.writeUInt32LE(n, 7)
  out.writeUInt32LE(d, 11)
  out.writeUInt32LE(set.classCount, 15)
  for (let i = 0; i < n; i++) {
    const row = set.features[i]
    if (row.length !== d) {
      throw new Error(`feature row ${i} has width ${row.length}, expected ${d}`)
    }
    const label = set.labels[i]
    if (!Number.isInteger(label) || label < 0 || label >= set.classCount) {
      throw new Error(`label ${label} out of range [0, ${set.classCount}) at row ${i}`)
    }
    const base = FSET_HEADER_BYTES + i * recordBytes
    out.writeUInt32LE(label, base)
    for (let j = 0; j < d; j++) {
      out.writeFloatLE(row[j], base + 4 + 4 * j)
    }
  }
  return out
}

/** Minimal reader used by the exporter's own round-trip checks. */
export function decodeFset(blob: Buffer): FeatureSet {
  if (blob.length < FSET_HEADER_BYTES) {
    throw new Error(`truncated header: ${blob.length} bytes`)
  }
  if (blob.toString('ascii', 0, 5) !== FSET_MAGIC) {
    throw new Error('bad magic')
  }
  const version = blob.readUInt16LE(5)
  if (version !== FSET_VERSION) {
    throw new Error(`unsupported format version ${version}`)
  }
  const n = blob.readUInt32LE(7)
  const d = blob.readUInt32LE(11)
  const classCount = blob.readUInt32LE(15)
  const recordBytes = 4 + 4 * d
  if (blob.length !== FSET_HEADER_BYTES + n * recordBytes) {
    throw new Error(`file length ${blob.length} does not match layout`)
  }
  const features: Float32Array[] = []
  const labels: number[] = []
  for (let i = 0; i < n; i++) {
    const base = FSET_HEADER_BYTES + i * recordBytes
    const label = blob.readUInt32LE(base)
    if (label >= classCount) {
      throw new Error(`label ${label} >= C=${classCount} in record ${i}`)
    }
    labels.push(label)
    const row = new Float32Array(d)
    for (let j = 0; j < d; j++) {
      row[j] = blob.readFloatLE(base + 4 + 4 * j)
    }
    features.push(row)
  }
  return { features, labels, classCount }
}
