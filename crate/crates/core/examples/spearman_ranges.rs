//! Range statistics over group vectors and Spearman correlation between
//! group factors and accuracy, including tied and undefined cases.
//!
//! Run with `cargo run --example spearman_ranges`.

use ragfair::analysis::{average_ranks, range_metric, spearman, RangeKind};
use ragfair::corpus::FairnessCategory;
use ragfair::metrics::{GroupVector, VectorKind};

fn main() -> ragfair::Result<()> {
    let era = FairnessCategory::new("Era", ["ancient", "medieval", "modern", "unknown"])?;
    let delta = GroupVector::new(&era, VectorKind::DeltaAc, vec![Some(4.0), Some(9.5), Some(1.5), None]);
    let r = range_metric(&delta, RangeKind::RDelta);
    println!(
        "range of dAC: {:?} (max at {:?}, min at {:?}, {} groups present)",
        r.value, r.argmax_group, r.argmin_group, r.present_groups
    );

    let x = [1.0, 2.0, 2.0, 4.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    println!("average ranks of {x:?}: {:?}", average_ranks(&x));
    println!("rho = {:?}", spearman(&x, &y));
    println!("rho with a constant side = {:?}", spearman(&[0.25; 4], &y));
    println!("rho with two points = {:?}", spearman(&[1.0, 2.0], &[2.0, 1.0]));
    Ok(())
}
