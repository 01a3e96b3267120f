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
use epiground_core::w2s::*;

fn main() {
    let start = fixtures::apartment();
    let vocab = scene_vocabulary(&start);
    let seed = 0u64;
    let tasks = enumerate_tasks(&start, 8, 2);
    let mut split = split_tasks(&tasks, seed, 2);
    let extra = augment_to_length(&start, &split.episodic, 8, 2, seed);
    split.episodic.extend(extra);

    // (a) collection at budget 12k
    let explored = collect_episodic(&start, &split.episodic, 12_000, derive_seed(seed, "collect"), 4, 3).unwrap();
    let mut per_task_pos: std::collections::BTreeMap<String, usize> = Default::default();
    for t in &explored { if t.is_positive() { *per_task_pos.entry(t.goal.task_name.clone()).or_default() += 1; } }
    for t in &split.episodic {
        println!("len {} {}: kept positives {}", t.gold_len, t.goal.task_name, per_task_pos.get(&t.goal.task_name).copied().unwrap_or(0));
    }

    // (b) expert alone
    let instr = build_instruction_dataset(&start, &explored, &TaskWeights::uniform()).unwrap();
    println!("instruction records: {}", instr.len());
    let examples: Vec<SeqExample> = instr.iter().map(|r| tokenize_instruction(r, &vocab).unwrap()).collect();
    let naive = PolicyModel::init(Capacity::Weak, vocab.clone(), Role::Naive, derive_seed(seed, "weak-init"));
    let cfg = LoopConfig { learning_rate: 0.05, epochs: 200, batch_size: 8, seed: derive_seed(seed, "expert-sft"), max_grad_norm: Some(10.0) };
    let (expert, _) = train_loop(naive.clone(), TrainData::Sft { examples: &examples, weights: &TaskWeights::uniform() }, &cfg, None).unwrap();
    let (nll, _) = sft_loss(&expert, &examples, &TaskWeights::uniform()).unwrap();
    println!("expert train nll/ex: {:.3}", nll);
    let mut e_ok = 0;
    for t in &split.episodic {
        let plan = decode_plan_plain(&expert, &start, &t.goal, 40).unwrap();
        let ok = plan.map(|p| epiground_core::metrics::plan_succeeds(&start, &p, &t.goal)).unwrap_or(false);
        if ok { e_ok += 1; } else { println!("  expert fails len {} {}", t.gold_len, t.goal.task_name); }
    }
    println!("expert-alone success: {}/{}", e_ok, split.episodic.len());

    // (c) probe train vs val on the final layer of a QA-capable model
    let mut qa_rng = rng_from_seed(7);
    let qa_train: Vec<_> = generate_qa(&start, 220, 4, 6, &mut qa_rng);
    let sft: Vec<SeqExample> = qa_train.iter().map(|e| e.to_seq_example(&vocab).unwrap()).collect();
    let model = PolicyModel::init(Capacity::StrongToy, vocab.clone(), Role::Strong, 9);
    let cfg2 = LoopConfig { learning_rate: 0.01, epochs: 120, batch_size: 8, seed: 3, max_grad_norm: Some(10.0) };
    let (model, _) = train_loop(model, TrainData::Sft { examples: &sft, weights: &TaskWeights::uniform() }, &cfg2, None).unwrap();
    let mut qa_rng = rng_from_seed(8);
    let qa_eval: Vec<_> = generate_qa(&start, 1000, 4, 6, &mut qa_rng);
    println!("greedy qa: {:.3}", greedy_qa_accuracy(&model, &qa_eval).unwrap());
    let items = qa_probe_items(&qa_eval, &vocab).unwrap();
    let pex = export_examples(&model, &items).unwrap();
    // final layer only, train vs val
    let last: Vec<ProbeExample> = pex.iter().map(|e| ProbeExample { hidden: vec![e.hidden[7].clone()], label: e.label }).collect();
    for (lr, ep) in [(0.05, 250usize), (0.1, 600), (0.3, 1000)] {
        let mut pc = ProbeConfig::for_model(1, 128, 4);
        pc.topology = ProbeTopology::SingleLayer;
        pc.learning_rate = lr; pc.epochs = ep;
        let (params, val) = train_probe(&last, &pc, 0.8).unwrap();
        let mut correct = 0;
        for e in &last {
            let probs = predictor_forward(&params, &e.hidden).unwrap();
            let best = probs.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            if best == e.label { correct += 1; }
        }
        println!("final-layer probe lr={lr} ep={ep}: val={val:.3} train_all={:.3}", correct as f64 / last.len() as f64);
    }
}
