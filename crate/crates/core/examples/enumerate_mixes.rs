//! The 89 race mixes, their subject counts at a chosen total and the number
//! of markers they occupy on the flattened net.

use racemix::distributions::{net_layout, simplex_points};
use racemix::mix_to_counts;

fn main() -> racemix::Result<()> {
    let total: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let points = simplex_points();
    for (i, p) in points.iter().enumerate() {
        let c = mix_to_counts(&p.mix, total)?;
        println!("{i:>2}  {:<28} {:?}  {:?}", p.mix.to_string(), c.0, p.kind);
    }
    let mixes: Vec<_> = points.iter().map(|p| p.mix).collect();
    println!(
        "{} mixes, {} net markers",
        mixes.len(),
        net_layout(&mixes)?.len()
    );
    Ok(())
}
