use kinemb::descriptor::{decode_checkpoint, encode_checkpoint, DescriptorModel};
use kinemb::pretrain::{train, TrainRecord};

use super::{corpus_split, to_json, Common};
use crate::config::{load, PretrainConfig};
use crate::error::{io_err, CliError, Result};
use crate::svg::{Mark, Plot, Series};

pub const CHECKPOINT: &str = "model.gdm";

pub fn pretrain(args: &Common, resume: bool) -> Result<()> {
    let loaded = load::<PretrainConfig>(&args.config)?;
    let c = &loaded.config;
    let bundle = args.bundle(&loaded, &c.output_dir)?;
    let (train_set, validation) = corpus_split(&c.data, c.seed, &args.config)?;
    let model = if resume {
        let path = bundle.dir().join(CHECKPOINT);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let model = decode_checkpoint(&bytes)?;
        if model.config != c.model {
            return Err(CliError::Usage(format!(
                "checkpoint {} was built with {:?}, config asks for {:?}",
                path.display(),
                model.config,
                c.model
            )));
        }
        model
    } else {
        DescriptorModel::init(c.model, c.seed)?
    };
    let outcome = train(model, &train_set, &validation, &c.train.with_seed(c.seed))?;
    for (e, s) in outcome.epoch_seconds.iter().enumerate() {
        eprintln!("epoch {:>3}  {:.2}s  val {:.5}", e + 1, s, outcome.record.epochs[e].val_loss);
    }
    let mut bundle = bundle;
    bundle.add(CHECKPOINT, encode_checkpoint(&outcome.model));
    bundle.add("train_record.csv", outcome.record.to_csv());
    bundle.add("train_record.json", to_json(&outcome.record));
    bundle.add("loss.svg", loss_plot(&outcome.record).render());
    bundle.finish("pretrain", &loaded.raw)
}

fn loss_plot(record: &TrainRecord) -> Plot {
    let curve = |label: &str, f: fn(&kinemb::pretrain::EpochRow) -> f64| Series {
        label: label.into(),
        points: record.epochs.iter().map(|r| (r.epoch as f64, f(r))).collect(),
        mark: Mark::Line,
    };
    Plot {
        title: "denoising loss".into(),
        x_label: "epoch".into(),
        y_label: "mean squared error".into(),
        series: vec![curve("train", |r| r.train_loss), curve("validation", |r| r.val_loss)],
        ..Plot::default()
    }
}
