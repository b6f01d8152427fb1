//! Runtime growth of the HMM backward pass in the state count, on a batch of
//! eight sequences so the dense pass is compute-bound rather than limited by
//! streaming the transition matrix from memory once per sequence.

use lrinfer_core::bench::{log_log_slope, random_token_batch, synthetic_hmm, time_median};

const RANK: usize = 64;
const VOCAB: usize = 128;

#[test]
fn hmm_runtime_grows_linearly_low_rank_and_quadratically_dense() {
    let x = random_token_batch(8, 32, VOCAB, 1);
    let mut low = Vec::new();
    let mut dense = Vec::new();
    for l in [1024usize, 2048, 4096, 8192] {
        let lr = synthetic_hmm(l, RANK, VOCAB, l as u64).unwrap();
        let (secs, _) = time_median(1, 5, || lr.log_marginal_batch(&x)).unwrap();
        low.push((l as f64, secs));
        let d = lr.to_dense_with_limit(u128::MAX).unwrap();
        let (secs, _) = time_median(1, 3, || d.log_marginal_batch(&x)).unwrap();
        dense.push((l as f64, secs));
    }
    let (sl, sd) = (log_log_slope(&low), log_log_slope(&dense));
    println!("low-rank slope {sl:.3}, dense slope {sd:.3}");
    assert!((0.8..=1.2).contains(&sl), "low-rank slope {sl}: {low:?}");
    assert!((1.7..=2.3).contains(&sd), "dense slope {sd}: {dense:?}");
}
