// Scratch probe for the repeated-segment copy task: does the fixed-offset
// copy circuit form at 128 and retarget to lag 256 during 512 adaptation?
use masformer::attention::{AttentionPattern, LayerPlan};
use masformer::model::{Model, ModelConfig};
use masformer::numerics::RngState;
use masformer::training::{continual_train, perplexity, train, Corpus, Document, TrainSpec};

// A document is one random permutation of the whole vocabulary, repeated to
// length 512. Every bigram is equally likely across documents, so the only
// transferable rule is "copy the token one period back".
fn periodic_doc(rng: &mut RngState) -> Document {
    let vocab = 64usize;
    let mut pool: Vec<u16> = (0..vocab as u16).collect();
    for i in 0..vocab - 1 {
        let j = i + rng.below((vocab - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut tokens = Vec::with_capacity(512);
    for i in 0..512 {
        tokens.push(pool[i % vocab]);
    }
    Document { tokens }
}

fn corpus(count: usize, rng: &mut RngState) -> Corpus {
    Corpus { docs: (0..count).map(|_| periodic_doc(rng)).collect() }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(400);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(400);
    let lr: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let layers: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);
    let d_model: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32);

    let mut rng = RngState::new(21).substream(3);
    let train_docs = corpus(128, &mut rng);
    let mut held_rng = RngState::new(21).substream(5);
    let heldout = corpus(64, &mut held_rng);

    let plan = LayerPlan::uniform(AttentionPattern::Full, layers).unwrap();
    let config = ModelConfig {
        layers,
        d_model,
        n_heads: 4,
        d_ff: 4 * d_model,
        vocab: 256,
        max_pos: 128,
        plan: plan.clone(),
        seed: 21,
    };
    let pre = TrainSpec {
        steps: pre_steps,
        warmup_steps: 30,
        batch_size: 8,
        seq_len: 128,
        learning_rate: 3e-3,
        seed: 21,
    };
    let out = train(config, &train_docs, &pre).unwrap();
    for e in out.log.iter().filter(|e| e.step % 100 == 0 || e.step == 1) {
        println!("pre step {:4}  loss {:.4}", e.step, e.loss);
    }
    let base = out.model;
    let fork = || Model::from_parts(base.config.clone(), base.params.clone()).unwrap();

    let mut a = fork();
    a.extend_positions(4).unwrap();
    println!("extend-only heldout ppl {:.3}", perplexity(&a, &heldout).unwrap());

    let adapt_short = TrainSpec {
        steps,
        warmup_steps: 20,
        batch_size: 8,
        seq_len: 128,
        learning_rate: lr,
        seed: 22,
    };
    let b = continual_train(fork(), 4, plan.clone(), &train_docs, &adapt_short).unwrap();
    println!(
        "adapt@128 final loss {:.4} heldout ppl {:.3}",
        b.log.last().unwrap().loss,
        perplexity(&b.model, &heldout).unwrap()
    );

    let adapt_long = TrainSpec {
        steps,
        warmup_steps: 20,
        batch_size: 4,
        seq_len: 512,
        learning_rate: lr,
        seed: 22,
    };
    let c = continual_train(fork(), 4, plan, &train_docs, &adapt_long).unwrap();
    for e in c.log.iter().filter(|e| e.step % 50 == 0 || e.step == 1) {
        println!("step {:4}  loss {:.4}", e.step, e.loss);
    }
    println!("adapt@512 heldout ppl {:.3}", perplexity(&c.model, &heldout).unwrap());
}
