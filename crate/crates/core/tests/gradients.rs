use dtaf::verify::{check_block, Block, GRAD_TOLERANCE};

#[test]
fn every_block_matches_finite_differences_on_ten_seeds() {
    for block in Block::ALL {
        for seed in 0..10 {
            let r = check_block(block, seed).unwrap();
            assert!(r.checked > 0);
            assert!(
                r.max_relative_error < GRAD_TOLERANCE,
                "{} seed {seed}: {r:?}",
                block.name()
            );
        }
    }
}
