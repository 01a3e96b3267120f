use epiground_core::corpus::*;
use epiground_core::fixtures;
use epiground_core::mcts::*;
use epiground_core::pipeline::*;
use epiground_core::policy::*;
use epiground_core::probe::*;
use epiground_core::qa::*;
use epiground_core::rng::*;
use epiground_core::tasks::*;
use epiground_core::train::*;
use epiground_core::world::*;

fn main() {
    let start = fixtures::apartment();
    // 1. Gold-length coverage of 2-pred and 3-pred families.
    let t2 = enumerate_tasks(&start, 10, 2);
    let mut by_len: std::collections::BTreeMap<usize, usize> = Default::default();
    for t in &t2 { *by_len.entry(t.gold_len).or_default() += 1; }
    println!("2-pred lens: {by_len:?}");

    // 2. Collection success per episodic task at budget 3000.
    let split = split_tasks(&t2, 0, 2);
    let epi: Vec<_> = split.episodic.iter().collect();
    println!("episodic lens: {:?}", epi.iter().map(|t| t.gold_len).collect::<Vec<_>>());
    for t in &split.episodic {
        let cfg = SearchConfig { simulations: 3000, seed: 1, ..Default::default() };
        let r = search(&start, &t.goal, &cfg).unwrap();
        let pos = r.explored.iter().filter(|e| e.is_positive()).count();
        println!("  {} len {}: positives {}/3000 best_positive={}", t.goal.task_name, t.gold_len, pos, r.best_plan.is_positive());
    }

    // 3. Probe on final layer of a model that can answer QA by decoding.
    let vocab = scene_vocabulary(&start);
    let mut qa_rng = rng_from_seed(7);
    let qa_train: Vec<_> = generate_qa(&start, 220, 4, 6, &mut qa_rng);
    let examples: Vec<SeqExample> = qa_train.iter().map(|e| e.to_seq_example(&vocab).unwrap()).collect();
    let model = PolicyModel::init(Capacity::StrongToy, vocab.clone(), Role::Strong, 9);
    let cfg = LoopConfig { learning_rate: 0.01, epochs: 120, batch_size: 8, seed: 3, max_grad_norm: Some(10.0) };
    let (model, _) = train_loop(model, TrainData::Sft { examples: &examples, weights: &TaskWeights::uniform() }, &cfg, None).unwrap();
    let mut qa_rng = rng_from_seed(8);
    let qa_eval: Vec<_> = generate_qa(&start, 300, 4, 6, &mut qa_rng);
    println!("greedy qa: {:.3}", greedy_qa_accuracy(&model, &qa_eval).unwrap());
    let items = qa_probe_items(&qa_eval, &vocab).unwrap();
    let pex = export_examples(&model, &items).unwrap();
    for (lr, epochs, n1) in [(0.05, 150usize, 32usize), (0.1, 400, 32), (0.2, 600, 32), (0.1, 400, 64)] {
        let mut pc = ProbeConfig::for_model(model.num_layers(), model.embed_dim(), 4);
        pc.learning_rate = lr; pc.epochs = epochs; pc.n1 = n1;
        let profile = layerwise_probe(&pex, &pc, 0.8).unwrap();
        println!("lr={lr} ep={epochs} n1={n1}: {:?}", profile.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    }
}
