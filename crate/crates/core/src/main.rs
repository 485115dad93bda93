//! `ssrmap` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssrmap::codec::model::DEFAULT_ORDER;
use ssrmap::codec::{self, CodedBlob, ContextModel, ProbabilityModel};
use ssrmap::eval::sweep::{DEFAULT_K, DEFAULT_SEEDS};
use ssrmap::eval::{rows_to_csv, run_sweep, SweepConfig, METHODS};
use ssrmap::federated::{
    fed_train, FedConfig, Partition, DEFAULT_LOCAL_EPOCHS, DEFAULT_NODES, DEFAULT_ROUNDS,
};
use ssrmap::la::DEFAULT_TEMPERATURE;
use ssrmap::mapstore::synthetic::{
    DEFAULT_COARSE_STD, DEFAULT_DIM, DEFAULT_FINE_RANK, DEFAULT_FINE_STD, DEFAULT_ITEMS_PER_PLACE,
    DEFAULT_NOISE_STD, DEFAULT_NUM_PLACES,
};
use ssrmap::mapstore::{
    build_map, generate_synthetic, load_dataset, map_vectors, query_map, read_map, save_dataset,
    write_map, Dataset, Split, SyntheticSpec,
};
use ssrmap::nn::DEFAULT_LEARNING_RATE;
use ssrmap::ssr::{
    default_nested_dims, train, PairedSet, SsrConfig, SsrModel, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_TEXT_WEIGHT,
};
use ssrmap::textembed::{HashedBowEmbedder, DEFAULT_HASH_SEED, DEFAULT_TEXT_DIM};
use ssrmap::wire::{read_file, write_atomic};
use ssrmap::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  bad command-line arguments
  3  file I/O error
  4  malformed dataset or caption file
  5  invalid argument or unknown method
  6  numeric error (dimension mismatch, zero norm, non-finite value)
  7  corrupt, truncated or mismatched binary data
  8  a query has no positives among the references

Errors are printed as one line: error[<exit code>]: <kind>: <message>";

#[derive(Parser, Debug)]
#[command(
    name = "ssrmap",
    version,
    about = "Compress place-recognition maps into short embedding prefixes plus coded captions",
    after_help = EXIT_CODES
)]
struct Cli {
    /// Seed for every random choice (data generation, initialization, shuffling, partitions).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic place-recognition dataset.
    GenSynthetic(GenArgs),
    /// Train the projection on a dataset's reference split.
    Train(TrainArgs),
    /// Train the projection with simulated federated averaging.
    FedTrain(FedTrainArgs),
    /// Fit a caption context model for the coder.
    FitCodec(FitCodecArgs),
    /// Losslessly compress a text file with a fitted context model.
    Zip(ZipArgs),
    /// Restore a file written by `zip`.
    Unzip(ZipArgs),
    /// Build a compressed map from a dataset and a trained projection.
    Compress(CompressArgs),
    /// Print a compressed map's header, byte accounting and first elements.
    InspectMap(InspectArgs),
    /// Rank map elements for query records.
    Query(QueryArgs),
    /// Evaluate methods across compression levels and emit CSV.
    EvalSweep(SweepArgs),
}

#[derive(Args, Debug)]
struct TextArgs {
    /// Caption embedding dimension.
    #[arg(long, default_value_t = DEFAULT_TEXT_DIM)]
    text_dim: usize,
    /// Caption hashing seed.
    #[arg(long, default_value_t = DEFAULT_HASH_SEED)]
    text_seed: u64,
}

impl TextArgs {
    fn embedder(&self) -> Result<HashedBowEmbedder> {
        if self.text_dim == 0 {
            return Err(Error::InvalidArgument("--text-dim must be positive".into()));
        }
        Ok(HashedBowEmbedder::new(self.text_dim, self.text_seed))
    }
}

#[derive(Args, Debug)]
struct SsrArgs {
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Use the whole training set as a single batch.
    #[arg(long)]
    full_batch: bool,
    /// Weight of the image prefix in fused vectors; captions get the rest.
    #[arg(long, default_value_t = DEFAULT_TEXT_WEIGHT)]
    text_weight: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Nested prefix lengths trained jointly [default: 16,32,64,128 and the embedding dimension].
    #[arg(long, value_delimiter = ',')]
    nested_dims: Vec<usize>,
    /// Width of an optional tanh hidden layer.
    #[arg(long)]
    hidden_units: Option<usize>,
}

impl SsrArgs {
    fn config(&self, d: usize, seed: u64) -> SsrConfig {
        let mut cfg = SsrConfig::new(d, seed);
        cfg.epochs = self.epochs;
        cfg.learning_rate = self.lr;
        cfg.batch_size = self.batch_size;
        cfg.full_batch = self.full_batch;
        cfg.text_weight = self.text_weight;
        cfg.temperature = self.temperature;
        if !self.nested_dims.is_empty() {
            cfg.nested_dims = self.nested_dims.clone();
        }
        cfg.hidden_units = self.hidden_units;
        cfg
    }
}

#[derive(Args, Debug)]
struct FedArgs {
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: usize,
    /// Local epochs per node per round.
    #[arg(long, default_value_t = DEFAULT_LOCAL_EPOCHS)]
    local_epochs: usize,
    /// `iid` (seeded shuffle) or `contiguous`.
    #[arg(long, default_value = "iid")]
    partition: String,
    /// Weight nodes by element count when averaging.
    #[arg(long)]
    weighted: bool,
}

impl FedArgs {
    fn config(&self, seed: u64) -> Result<FedConfig> {
        Ok(FedConfig {
            nodes: self.nodes,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            partition: Partition::parse(&self.partition)?,
            weighted: self.weighted,
            seed,
        })
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NUM_PLACES)]
    places: usize,
    /// Items per place; the last one of each place is the query.
    #[arg(long, default_value_t = DEFAULT_ITEMS_PER_PLACE)]
    items: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_COARSE_STD)]
    coarse_std: f64,
    #[arg(long, default_value_t = DEFAULT_FINE_STD)]
    fine_std: f64,
    #[arg(long, default_value_t = DEFAULT_FINE_RANK)]
    fine_rank: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of the reference split used for training.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[command(flatten)]
    ssr: SsrArgs,
    #[command(flatten)]
    text: TextArgs,
}

#[derive(Args, Debug)]
struct FedTrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ssr: SsrArgs,
    #[command(flatten)]
    fed: FedArgs,
    #[command(flatten)]
    text: TextArgs,
}

#[derive(Args, Debug)]
struct FitCodecArgs {
    /// Caption file, one caption per line.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    input: Option<PathBuf>,
    /// Fit on the reference captions of a dataset instead.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ZipArgs {
    /// Context model written by `fit-codec`.
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model written by `train` or `fed-train`.
    #[arg(long)]
    model: PathBuf,
    /// Prefix length; 0 stores captions only.
    #[arg(long)]
    dims: usize,
    /// fp32, fp16 or q<bits> (for example q8).
    #[arg(long, default_value = "fp32")]
    encoding: String,
    /// Context model file; fitted on the reference captions when absent.
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Context order used when fitting the codec here.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    /// Which records to store: reference, query or all.
    #[arg(long, default_value = "reference")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    text: TextArgs,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    map: PathBuf,
    /// Number of elements to list with their decoded captions.
    #[arg(long, default_value_t = 5)]
    show: usize,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    map: PathBuf,
    /// Projection model; required unless the map stores captions only.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset holding the query records.
    #[arg(long)]
    dataset: PathBuf,
    /// Query a single record by id instead of the whole query split.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Methods to evaluate [default: all].
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Compression levels [default: 16,32,64,128 and the embedding dimension].
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Seeds per method: --seed, --seed + 1, ...
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    seeds: usize,
    /// Fraction of references used to fit learned methods.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Storage encoding of prefixes and coordinates: fp32, fp16 or q<bits>.
    #[arg(long, default_value = "fp32")]
    encoding: String,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    ssr: SsrArgs,
    #[command(flatten)]
    fed: FedArgs,
    #[command(flatten)]
    text: TextArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let parts: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                .collect();
            eprintln!(
                "error[2]: usage: {}",
                parts.join(" ").trim_start_matches("error: ")
            );
            return ExitCode::from(2);
        }
    };
    eprintln!("ssrmap: resolved config: {cli:?}");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{code}]: {}: {msg}", e.kind());
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::FedTrain(a) => cmd_fed_train(a, seed),
        Command::FitCodec(a) => fit_codec(a),
        Command::Zip(a) => zip(a),
        Command::Unzip(a) => unzip(a),
        Command::Compress(a) => compress(a),
        Command::InspectMap(a) => inspect(a),
        Command::Query(a) => query(a),
        Command::EvalSweep(a) => sweep(a, seed),
    }
}

fn gen_synthetic(a: GenArgs, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        num_places: a.places,
        items_per_place: a.items,
        dim: a.dim,
        coarse_std: a.coarse_std,
        fine_std: a.fine_std,
        fine_rank: a.fine_rank,
        noise_std: a.noise_std,
        ..SyntheticSpec::new(seed)
    };
    let records = generate_synthetic(&spec)?;
    save_dataset(&a.out, &records)?;
    eprintln!(
        "ssrmap: wrote {} records to {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

/// Reference images and captions of a dataset, ready for training.
fn references(ds: &Dataset) -> (Vec<ssrmap::EmbeddingVector>, Vec<ssrmap::EmbeddingVector>) {
    let idx = ds.indices(Split::Reference);
    (ds.images(&idx), ds.texts(&idx))
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&a.dataset, &a.text.embedder()?)?;
    let d = ds.image_dim();
    let (images, texts) = references(&ds);
    let mut model = SsrModel::new(d, d, a.ssr.config(d, seed))?;
    let report = train(&mut model, PairedSet::new(&images, &texts)?, a.fraction)?;
    write_atomic(&a.out, &model.to_bytes())?;
    eprintln!(
        "ssrmap: trained on {} elements in {} steps ({:.1}s): loss {:.4} -> {:.4}",
        report.elements_used,
        report.steps,
        report.wall_seconds,
        report.initial_loss,
        report.final_loss
    );
    Ok(())
}

fn cmd_fed_train(a: FedTrainArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&a.dataset, &a.text.embedder()?)?;
    let d = ds.image_dim();
    let (images, texts) = references(&ds);
    let mut model = SsrModel::new(d, d, a.ssr.config(d, seed))?;
    let report = fed_train(
        &mut model,
        PairedSet::new(&images, &texts)?,
        &a.fed.config(seed)?,
    )?;
    write_atomic(&a.out, &model.to_bytes())?;
    let losses: Vec<String> = report
        .round_losses
        .iter()
        .map(|l| format!("{l:.4}"))
        .collect();
    eprintln!(
        "ssrmap: {} nodes {:?}, {} steps ({:.1}s), round losses [{}]",
        report.node_sizes.len(),
        report.node_sizes,
        report.steps,
        report.wall_seconds,
        losses.join(", ")
    );
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })
}

fn fit_codec(a: FitCodecArgs) -> Result<()> {
    let captions: Vec<String> = match (&a.input, &a.dataset) {
        (Some(p), _) => read_text(p)?.lines().map(str::to_string).collect(),
        (None, Some(p)) => {
            let ds = load_dataset(p, &HashedBowEmbedder::default())?;
            ds.captions(&ds.indices(Split::Reference))
                .into_iter()
                .map(str::to_string)
                .collect()
        }
        (None, None) => return Err(Error::InvalidArgument("give --input or --dataset".into())),
    };
    let model = codec::fit_context_model(&captions, a.order)?;
    write_atomic(&a.out, &model.to_bytes())?;
    eprintln!(
        "ssrmap: fitted order-{} model on {} captions ({} contexts, id {})",
        model.order(),
        captions.len(),
        model.context_count(),
        codec::model_id_hex(&model.model_id())
    );
    Ok(())
}

fn load_codec(path: &Path) -> Result<ContextModel> {
    ContextModel::from_bytes(&read_file(path)?)
}

fn zip(a: ZipArgs) -> Result<()> {
    let model = load_codec(&a.codec)?;
    let text = read_file(&a.input)?;
    if u32::try_from(text.len()).is_err() {
        return Err(Error::InvalidArgument(format!(
            "{} exceeds 4 GiB",
            a.input.display()
        )));
    }
    let blob = codec::encode(&model, &text);
    write_atomic(&a.out, &blob.to_bytes())?;
    eprintln!(
        "ssrmap: {} bytes -> {} payload bytes ({} bits)",
        text.len(),
        blob.payload_bytes(),
        blob.payload_bits
    );
    Ok(())
}

fn unzip(a: ZipArgs) -> Result<()> {
    let model = load_codec(&a.codec)?;
    let blob = CodedBlob::from_bytes(&read_file(&a.input)?)?;
    let text = codec::decode(&model, &blob)?;
    write_atomic(&a.out, &text)
}

fn compress(a: CompressArgs) -> Result<()> {
    let embedder = a.text.embedder()?;
    let ds = load_dataset(&a.dataset, &embedder)?;
    let model = SsrModel::from_bytes(&read_file(&a.model)?)?;
    let indices = match a.split.as_str() {
        "reference" => ds.indices(Split::Reference),
        "query" => ds.indices(Split::Query),
        "all" => (0..ds.len()).collect(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (valid: reference, query, all)"
            )))
        }
    };
    let codec_model = match &a.codec {
        Some(p) => load_codec(p)?,
        None => codec::fit_context_model(&ds.captions(&ds.indices(Split::Reference)), a.order)?,
    };
    let map = build_map(
        &model,
        &ds,
        &indices,
        a.dims,
        &codec_model,
        &a.encoding,
        &embedder,
    )?;
    write_map(&a.out, &map)?;
    eprintln!(
        "ssrmap: {} elements, {:.4} bytes per element ({:.4} with header)",
        map.len(),
        map.bytes_per_element(false)?,
        map.bytes_per_element(true)?
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let map = read_map(&a.map)?;
    println!("elements: {}", map.len());
    println!("dims: {}", map.dims);
    println!("encoding: {}", map.encoding.name());
    println!("text_weight: {}", map.text_weight);
    println!("text_dim: {}", map.embedder.dim);
    println!("text_seed: {}", map.embedder.seed);
    println!("codec_order: {}", map.codec_model.order());
    println!(
        "codec_id: {}",
        codec::model_id_hex(&map.codec_model.model_id())
    );
    println!("header_bytes: {}", map.header_len()?);
    if !map.is_empty() {
        println!("bytes_per_element: {:.4}", map.bytes_per_element(false)?);
        println!(
            "bytes_per_element_amortized: {:.4}",
            map.bytes_per_element(true)?
        );
    }
    println!("summary: {}", map.summary);
    for i in 0..a.show.min(map.len()) {
        let e = &map.elements[i];
        println!(
            "{}\t{}\t{}",
            e.id,
            e.caption.payload_bytes(),
            map.decode_caption(i)?
        );
    }
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let map = read_map(&a.map)?;
    let model = a
        .model
        .as_deref()
        .map(|p| read_file(p).and_then(|b| SsrModel::from_bytes(&b)))
        .transpose()?;
    let ds = load_dataset(&a.dataset, &map.embedder)?;
    let indices: Vec<usize> = match &a.id {
        Some(id) => vec![ds
            .records
            .iter()
            .position(|r| &r.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no record with id `{id}`")))?],
        None => ds.indices(Split::Query),
    };
    let refs = map_vectors(&map)?;
    println!("query\trank\tid\tsimilarity");
    for i in indices {
        let r = &ds.records[i];
        let hits = query_map(
            &map,
            &refs,
            model.as_ref(),
            r.image_embedding.as_slice(),
            &r.caption,
            a.k,
        )?;
        for (rank, h) in hits.iter().enumerate() {
            println!("{}\t{}\t{}\t{:.6}", r.id, rank + 1, h.id, h.similarity);
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&a.dataset, &a.text.embedder()?)?;
    let d = ds.image_dim();
    let mut cfg = SweepConfig::new(d, seed);
    if !a.methods.is_empty() {
        cfg.methods = a.methods.clone();
    }
    cfg.dims = if a.dims.is_empty() {
        default_nested_dims(d)
    } else {
        a.dims.clone()
    };
    cfg.k = a.k;
    cfg.seeds = a.seeds;
    cfg.fraction = a.fraction;
    cfg.encoding = a.encoding.clone();
    cfg.codec_order = a.order;
    cfg.ssr = a.ssr.config(d, seed);
    cfg.fed = a.fed.config(seed)?;
    cfg.ae.epochs = a.ssr.epochs;
    cfg.ae.learning_rate = a.ssr.lr;
    cfg.ae.batch_size = a.ssr.batch_size;
    let rows = run_sweep(&ds, &cfg)?;
    let csv = rows_to_csv(&rows);
    match &a.out {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    eprintln!(
        "ssrmap: {} rows over methods {} (valid: {})",
        rows.len(),
        cfg.methods.join(","),
        METHODS.join(",")
    );
    Ok(())
}
