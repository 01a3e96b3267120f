use epiground_core::corpus::*;
use epiground_core::fixtures;
use epiground_core::metrics::plan_succeeds;
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
    split.episodic.extend(augment_to_length(&start, &split.episodic, 8, 2, seed));

    // pretrain strong
    let mut qa_rng = rng_from_seed(derive_seed(seed, "qa-train"));
    let qa_train = generate_qa(&start, 220, 6, &mut qa_rng);
    let pre = pretrain_examples(&start, &vocab, &split.pretrain, &qa_train).unwrap();
    let strong0 = PolicyModel::init(Capacity::StrongToy, vocab.clone(), Role::Strong, derive_seed(seed, "strong-init"));
    let pcfg = LoopConfig { learning_rate: 0.01, epochs: 250, batch_size: 8, seed: derive_seed(seed, "pretrain"), max_grad_norm: Some(10.0) };
    let (strong, _) = train_loop(strong0, TrainData::Sft { examples: &pre, weights: &TaskWeights::uniform() }, &pcfg, None).unwrap();

    // strong on SEEN pretrain pair tasks vs held-out
    let seen_pairs: Vec<&Task> = split.pretrain.iter().filter(|t| t.goal.predicates.len() == 2).take(20).collect();
    let mut seen_ok = 0;
    for t in &seen_pairs {
        if decode_plan_plain(&strong, &start, &t.goal, 40).unwrap().map(|p| plan_succeeds(&start, &p, &t.goal)).unwrap_or(false) { seen_ok += 1; }
    }
    let mut unseen_ok = 0;
    for t in &split.episodic {
        if decode_plan_plain(&strong, &start, &t.goal, 40).unwrap().map(|p| plan_succeeds(&start, &p, &t.goal)).unwrap_or(false) { unseen_ok += 1; }
    }
    eprintln!("strong: seen pairs {}/{}  held-out {}/{}", seen_ok, seen_pairs.len(), unseen_ok, split.episodic.len());

    // grid expert configs, measure expert-alone and w2s
    let explored = collect_episodic(&start, &split.episodic, 12_000, derive_seed(seed, "collect"), 4, 3).unwrap();
    let naive = PolicyModel::init(Capacity::Weak, vocab.clone(), Role::Naive, derive_seed(seed, "weak-init"));
    for (kp, ep, lr) in [(4usize, 200usize, 0.05f64), (2, 200, 0.05), (4, 400, 0.03), (1, 300, 0.05), (4, 120, 0.05)] {
        // filter kept positives per task
        let mut by_task: std::collections::BTreeMap<String, Vec<&epiground_core::mcts::Trajectory>> = Default::default();
        for t in explored.iter().filter(|t| t.is_positive()) { by_task.entry(t.goal.task_name.clone()).or_default().push(t); }
        let mut use_trajs: Vec<epiground_core::mcts::Trajectory> = Vec::new();
        for (_, mut v) in by_task { v.sort_by_key(|t| t.steps.len()); for t in v.into_iter().take(kp) { use_trajs.push(t.clone()); } }
        let instr = build_instruction_dataset(&start, &use_trajs, &TaskWeights::uniform()).unwrap();
        let ex: Vec<SeqExample> = instr.iter().map(|r| tokenize_instruction(r, &vocab).unwrap()).collect();
        let cfg = LoopConfig { learning_rate: lr, epochs: ep, batch_size: 8, seed: derive_seed(seed, "expert-sft"), max_grad_norm: Some(10.0) };
        let (expert, _) = train_loop(naive.clone(), TrainData::Sft { examples: &ex, weights: &TaskWeights::uniform() }, &cfg, None).unwrap();
        let (nll, _) = sft_loss(&expert, &ex, &TaskWeights::uniform()).unwrap();
        let mut e_ok = 0; let mut w_ok = 0;
        let policy = W2sPolicy::new(&strong, &expert, &naive, W2sConfig { max_len: 40, ..Default::default() }).unwrap();
        for t in &split.episodic {
            if decode_plan_plain(&expert, &start, &t.goal, 40).unwrap().map(|p| plan_succeeds(&start, &p, &t.goal)).unwrap_or(false) { e_ok += 1; }
            if decode_plan_w2s(&policy, &start, &t.goal).unwrap().map(|p| plan_succeeds(&start, &p, &t.goal)).unwrap_or(false) { w_ok += 1; }
        }
        eprintln!("kp={kp} ep={ep} lr={lr}: nll/ex={nll:.2} expert {}/{} w2s {}/{}", e_ok, split.episodic.len(), w_ok, split.episodic.len());
    }

    // probe grid on final layer with new QA
    let qa_examples: Vec<SeqExample> = qa_train.iter().map(|e| e.to_seq_example(&vocab).unwrap()).collect();
    let m2 = PolicyModel::init(Capacity::StrongToy, vocab.clone(), Role::Strong, 9);
    let c2 = LoopConfig { learning_rate: 0.01, epochs: 150, batch_size: 8, seed: 3, max_grad_norm: Some(10.0) };
    let (m2, _) = train_loop(m2, TrainData::Sft { examples: &qa_examples, weights: &TaskWeights::uniform() }, &c2, None).unwrap();
    let mut qa_rng = rng_from_seed(8);
    let qa_eval = generate_qa(&start, 1000, 6, &mut qa_rng);
    eprintln!("greedy qa: {:.3}", greedy_qa_accuracy(&m2, &qa_eval).unwrap());
    let nc = candidate_locations(&start).len();
    let items = qa_probe_items(&qa_eval, &vocab).unwrap();
    let pex = export_examples(&m2, &items).unwrap();
    let last: Vec<ProbeExample> = pex.iter().map(|e| ProbeExample { hidden: vec![e.hidden[7].clone()], label: e.label }).collect();
    for (lr, ep, n1) in [(0.1, 500usize, 32usize), (0.3, 800, 32), (0.2, 800, 64)] {
        let mut pc = ProbeConfig::for_model(1, 128, nc);
        pc.topology = ProbeTopology::SingleLayer;
        pc.learning_rate = lr; pc.epochs = ep; pc.n1 = n1;
        let (_, val) = train_probe(&last, &pc, 0.8).unwrap();
        eprintln!("final-layer probe lr={lr} ep={ep} n1={n1}: val={val:.3}");
    }
}
