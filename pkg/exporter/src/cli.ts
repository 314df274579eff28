import { exportFeatures } from './export'

function parseArgs(argv: string[]): Record<string, string> {
  const args: Record<string, string> = {}
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    const value = argv[i + 1]
    if (!key.startsWith('--') || value === undefined) {
      throw new Error(`usage error near ${key}`)
    }
    args[key.slice(2)] = value
  }
  return args
}

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== 'export') {
    console.error(
      'usage: export --images DIR --backbone NAME --out FILE [--size 224] [--batch 16]',
    )
    return 2
  }
  let args: Record<string, string>
  try {
    args = parseArgs(argv.slice(1))
  } catch (err) {
    console.error(String(err))
    return 2
  }
  for (const required of ['images', 'backbone', 'out']) {
    if (!(required in args)) {
      console.error(`missing --${required}`)
      return 2
    }
  }
  try {
    const summary = await exportFeatures({
      imagesDir: args.images,
      backbone: args.backbone,
      outFile: args.out,
      size: args.size ? parseInt(args.size, 10) : undefined,
      batchSize: args.batch ? parseInt(args.batch, 10) : undefined,
    })
    console.log(
      `wrote ${summary.written} records (C=${summary.classCount}, ` +
        `d=${summary.featureWidth}) -> ${args.out}` +
        (summary.skipped.length ? `, skipped ${summary.skipped.length}` : ''),
    )
    return 0
  } catch (err) {
    console.error(String(err))
    return 1
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(code => process.exit(code))
}
