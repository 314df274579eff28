import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

export type LabeledImage = {
  file: string
  classIndex: number
  className: string
}

export type DecodedImage = {
  /** RGB pixels in [0, 1], row-major, length width*height*3 */
  pixels: Float32Array
  width: number
  height: number
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

/**
 * Scan a directory with one subdirectory per class. Class indices follow
 * the lexicographic order of the subdirectory names; files within a class
 * are ordered lexicographically too, so repeated scans enumerate the same
 * dataset in the same order.
 */
export function scanImageFolder(root: string): LabeledImage[] {
  const classDirs = fs
    .readdirSync(root, { withFileTypes: true })
    .filter(entry => entry.isDirectory())
    .map(entry => entry.name)
    .sort()
  if (classDirs.length === 0) {
    throw new Error(`no class subdirectories under ${root}`)
  }
  const images: LabeledImage[] = []
  classDirs.forEach((className, classIndex) => {
    const dir = path.join(root, className)
    const files = fs
      .readdirSync(dir)
      .filter(name => IMAGE_EXTENSIONS.has(path.extname(name).toLowerCase()))
      .sort()
    if (files.length === 0) {
      throw new Error(`class directory ${dir} contains no images`)
    }
    for (const name of files) {
      images.push({ file: path.join(dir, name), classIndex, className })
    }
  })
  return images
}

export function decodeImage(file: string): DecodedImage {
  const blob = fs.readFileSync(file)
  const ext = path.extname(file).toLowerCase()
  let width: number
  let height: number
  let rgba: Uint8Array
  if (ext === '.png') {
    const png = PNG.sync.read(blob)
    width = png.width
    height = png.height
    rgba = png.data
  } else {
    const decoded = jpeg.decode(blob, { useTArray: true })
    width = decoded.width
    height = decoded.height
    rgba = decoded.data
  }
  const pixels = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    pixels[i * 3] = rgba[i * 4] / 255
    pixels[i * 3 + 1] = rgba[i * 4 + 1] / 255
    pixels[i * 3 + 2] = rgba[i * 4 + 2] / 255
  }
  return { pixels, width, height }
}
