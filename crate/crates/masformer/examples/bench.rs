// Component timing: where does a desk-scale step spend its time?
use masformer::attention::{attention_backward, attention_forward, AttentionPattern};
use masformer::numerics::{matmul, matmul_backward, RngState, Tensor2D};
use std::time::Instant;

fn rnd(rng: &mut RngState, r: usize, c: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(r, c);
    for v in t.values_mut() { *v = rng.normal_f32(0.5); }
    t
}

fn best<F: FnMut()>(mut f: F) -> f64 {
    let mut b = f64::MAX;
    for _ in 0..6 { let t = Instant::now(); f(); b = b.min(t.elapsed().as_secs_f64()); }
    b * 1e3
}

fn main() {
    let mut rng = RngState::new(3);
    let x = rnd(&mut rng, 512, 64);
    let w = rnd(&mut rng, 64, 64);
    let f1 = rnd(&mut rng, 64, 128);
    let h = rnd(&mut rng, 512, 128);
    let f2 = rnd(&mut rng, 128, 64);
    let wq = rnd(&mut rng, 64, 64);
    let wk = rnd(&mut rng, 64, 64);
    let wv = rnd(&mut rng, 64, 64);
    let dout = rnd(&mut rng, 512, 64);
    let full = AttentionPattern::Full;
    let block = AttentionPattern::Block { block_size: 64 };

    println!("proj 512x64@64x64      {:.2} ms", best(|| { matmul(&x, &w).unwrap(); }));
    println!("ff1  512x64@64x128     {:.2} ms", best(|| { matmul(&x, &f1).unwrap(); }));
    println!("ff2  512x128@128x64    {:.2} ms", best(|| { matmul(&h, &f2).unwrap(); }));
    println!("proj bwd               {:.2} ms", best(|| { matmul_backward(&x, &w, &dout).unwrap(); }));
    println!("attn fwd full          {:.2} ms", best(|| { attention_forward(&x, &wq, &wk, &wv, &full, 4).unwrap(); }));
    println!("attn fwd block64       {:.2} ms", best(|| { attention_forward(&x, &wq, &wk, &wv, &block, 4).unwrap(); }));
    let (_, cache_f) = attention_forward(&x, &wq, &wk, &wv, &full, 4).unwrap();
    let (_, cache_b) = attention_forward(&x, &wq, &wk, &wv, &block, 4).unwrap();
    println!("attn bwd full          {:.2} ms", best(|| { attention_backward(&cache_f, &wq, &wk, &wv, &dout).unwrap(); }));
    println!("attn bwd block64       {:.2} ms", best(|| { attention_backward(&cache_b, &wq, &wk, &wv, &dout).unwrap(); }));
}
