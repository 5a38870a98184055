//! Confusion-matrix metrics on a hand-sized example, then the benchmark
//! table layout on a small aquatic taxonomy.

use aquanet::mask::IndexMask;
use aquanet::metrics::{weighted_prf, ConfusionMatrix, MetricsReport};
use aquanet::synthgen::aqua16_taxonomy;

fn main() -> aquanet::Result<()> {
    let gt = IndexMask::new(2, 2, vec![0, 0, 1, 1])?;
    let pred = IndexMask::new(2, 2, vec![0, 1, 1, 1])?;
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt, 255)?;
    println!("acc {} mIoU {} (7/12 = {})", cm.pixel_acc(None)?, cm.miou(None)?, 7.0 / 12.0);

    let tax = aqua16_taxonomy();
    let gt = IndexMask::from_fn(8, 8, |y, x| if y < 3 { 2 } else if x < 4 { 0 } else if y == 7 { 255 } else { 1 });
    let pred = IndexMask::from_fn(8, 8, |y, x| if y < 4 { 2 } else if x < 5 { 0 } else { 1 });
    let mut cm = ConfusionMatrix::new(tax.num_classes());
    cm.accumulate(&pred, &gt, tax.ignore_id())?;
    let report = MetricsReport::from_confusion(cm, &tax)?;
    print!("{}", report.render_table("example"));

    let (t, p): (Vec<usize>, Vec<usize>) = gt
        .data()
        .iter()
        .zip(pred.data())
        .filter(|(g, _)| **g != 255)
        .map(|(&g, &p)| (g as usize, p as usize))
        .unzip();
    let w = weighted_prf(&t, &p, tax.num_classes())?;
    println!("weighted P/R/F1 {:.4} {:.4} {:.4}", w.precision, w.recall, w.f1);
    Ok(())
}
