use std::path::Path;

use layercheck_core::bundling::{
    check_assumption_fresh_meas, check_assumption_prior_meas, check_joint_strategy_with,
    check_rd_bundle, extends_bottom_up, extension_substructure, extract_specification,
    ExtendVerdict, JointOptions, QuoteBundle,
};
use layercheck_core::dot::{annotations_for, poset_dot, system_dot, DotAnnotations};
use layercheck_core::embed::admits;
use layercheck_core::explore::{
    verify_joint_strategy, verify_recent_or_deep_relaxed, ExplorationBudget, JointSetup, Relax,
    TheoremReport,
};
use layercheck_core::format::{execution_document, parse_bundle, parse_execution, parse_system};
use layercheck_core::measurement::{check_recent_or_deep, classify_avoidance, measures_bottom_up};
use layercheck_core::semantics::{validate_execution, MeasurementClass};
use layercheck_core::{
    dependency_set, AttestationSystem, EventId, EventLabel, EventPoset, ObjectId, Semantics,
};
use serde_json::{json, Value};

use crate::report::{Input, InputError, Report};
use crate::{Command, RelaxFlag};

struct Ctx {
    sys: AttestationSystem,
    name: String,
}

impl Ctx {
    fn execution(&self, path: &Path) -> Result<(EventPoset, String), InputError> {
        let input = Input::read(path)?;
        let p = parse_execution(&input.text, &self.sys)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        Ok((p, input.name))
    }

    fn bundle(&self, path: &Path) -> Result<(QuoteBundle, String), InputError> {
        let input = Input::read(path)?;
        let b = parse_bundle(&input.text)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        Ok((b, input.name))
    }

    fn report(&self, command: &'static str) -> Report {
        Report::new(command, vec![("system", self.name.clone())])
    }
}

pub fn run(system: &Path, command: Command) -> Result<Report, InputError> {
    let input = Input::read(system)?;
    let (sys, validation) =
        parse_system(&input.text).map_err(|e| InputError(format!("{}: {e}", system.display())))?;
    let ctx = Ctx {
        sys,
        name: input.name,
    };
    if !validation.is_ok() && !matches!(command, Command::Validate { .. }) {
        let issues: Vec<String> = validation.issues.iter().map(|i| i.to_string()).collect();
        return Err(InputError(format!("invalid system: {}", issues.join("; "))));
    }
    match command {
        Command::Validate { executions } => validate(&ctx, &validation, &executions),
        Command::Depths { object, max } => depths(&ctx, &object, max),
        Command::CheckExec { execution } => check_exec(&ctx, &execution),
        Command::Admits { spec, execution } => admits_cmd(&ctx, &spec, &execution),
        Command::Classify { execution, event } => classify(&ctx, &execution, event),
        Command::BundleExtract { bundle } => bundle_extract(&ctx, &bundle),
        Command::BundleCheck { bundle, execution } => {
            bundle_check(&ctx, &bundle, execution.as_deref())
        }
        Command::Assumptions { execution } => assumptions(&ctx, &execution),
        Command::Joint {
            execution,
            bundle,
            reference,
            keep_att_start,
            relax,
        } => joint(
            &ctx,
            &execution,
            &bundle,
            reference.as_deref(),
            keep_att_start,
            &relax,
        ),
        Command::Explore {
            base,
            bundle,
            reference,
            max_adv,
            objects,
            no_repairs,
            relax,
            max_execs,
            workers,
        } => {
            let budget = ExplorationBudget {
                max_adversary_events: max_adv,
                objects: (!objects.is_empty()).then(|| objects.iter().map(ObjectId::new).collect()),
                include_repairs: !no_repairs,
                max_executions: max_execs,
                workers: workers.max(1),
            };
            explore(
                &ctx,
                &base,
                bundle.as_deref(),
                reference.as_deref(),
                budget,
                &relax,
            )
        }
        Command::ExportDot { execution, plain } => export_dot(&ctx, execution.as_deref(), plain),
    }
}

fn validate(
    ctx: &Ctx,
    validation: &layercheck_core::model::ValidationReport,
    executions: &[std::path::PathBuf],
) -> Result<Report, InputError> {
    let mut r = ctx.report("validate");
    r.findings = !validation.is_ok();
    for i in &validation.issues {
        r.line(format!("system issue: {i}"));
    }
    for n in &validation.notes {
        r.line(format!("note: {n}"));
    }
    if validation.is_ok() {
        r.line(format!(
            "system ok: {} objects, {} measurement edges, {} pcrs",
            ctx.sys.objects().len(),
            ctx.sys.measures_rel().len(),
            ctx.sys.pcrs().len()
        ));
    }
    let mut execs = Vec::new();
    for path in executions {
        let (p, name) = ctx.execution(path)?;
        let report = validate_execution(&ctx.sys, &p);
        r.inputs.push(("execution", name.clone()));
        if report.is_valid() {
            r.line(format!("{name}: valid ({} events)", p.len()));
        } else {
            r.findings = true;
            for i in &report.issues {
                r.line(format!("{name}: {i}"));
            }
        }
        execs.push(json!({ "name": name, "report": report }));
    }
    r.result = json!({ "system": validation, "executions": execs });
    Ok(r)
}

fn depths(ctx: &Ctx, object: &str, max: Option<usize>) -> Result<Report, InputError> {
    let mut r = ctx.report("depths");
    let o = ObjectId::new(object);
    let limit = max.unwrap_or(ctx.sys.objects().len());
    let mut levels = Vec::new();
    for i in 1..=limit {
        let d = dependency_set(&ctx.sys, &o, i)?;
        if d.is_empty() && max.is_none() {
            break;
        }
        let names: Vec<String> = d.iter().map(|x| x.to_string()).collect();
        r.line(format!("D{i}({object}) = {{{}}}", names.join(", ")));
        levels.push(names);
    }
    if levels.is_empty() {
        r.line(format!("{object} has no dependencies"));
    }
    r.result = json!({ "object": object, "levels": levels });
    Ok(r)
}

fn class_name(c: MeasurementClass) -> &'static str {
    match c {
        MeasurementClass::Clean => "clean",
        MeasurementClass::Detects => "detects",
        MeasurementClass::Avoidance => "avoidance",
    }
}

fn check_exec(ctx: &Ctx, path: &Path) -> Result<Report, InputError> {
    let (p, name) = ctx.execution(path)?;
    let mut r = ctx.report("check-exec");
    r.inputs.push(("execution", name));
    let report = validate_execution(&ctx.sys, &p);
    if !report.is_valid() {
        r.findings = true;
        for i in &report.issues {
            r.line(format!("invalid: {i}"));
        }
        r.result = json!({ "valid": false, "issues": report.issues });
        return Ok(r);
    }
    let sem = Semantics::new(&ctx.sys, &p)?;
    r.line(format!("valid ({} events)", p.len()));
    let mut outputs = Vec::new();
    for e in p.topological_order() {
        let label = p.label(e);
        match label {
            EventLabel::Meas { .. } => {
                let class = sem.class(e).map(class_name).unwrap_or("-");
                let out = sem.output(e).map(|t| t.to_string()).unwrap_or_default();
                r.line(format!("{}: {label} -> {out} [{class}]", p.id(e)));
                outputs.push(
                    json!({ "event": p.id(e), "label": label, "output": out, "class": class }),
                );
            }
            EventLabel::Quote { .. } => {
                let q = sem.quote(e)?;
                let flag = if q.indicates_corruption {
                    " [indicates corruption]"
                } else {
                    ""
                };
                r.line(format!("{}: {label} -> {}{flag}", p.id(e), q.term));
                outputs.push(json!({
                    "event": p.id(e),
                    "label": label,
                    "output": q.term,
                    "indicates_corruption": q.indicates_corruption,
                }));
            }
            _ => {}
        }
    }
    let detected: Vec<&EventId> = sem.detected().into_iter().map(|i| p.id(i)).collect();
    let avoid: Vec<&EventId> = sem.avoidances().into_iter().map(|i| p.id(i)).collect();
    r.line(format!("detected: {}", join(&detected)));
    r.line(format!("avoidances: {}", join(&avoid)));
    r.result =
        json!({ "valid": true, "outputs": outputs, "detected": detected, "avoidances": avoid });
    Ok(r)
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    if xs.is_empty() {
        "none".to_string()
    } else {
        xs.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn admits_cmd(ctx: &Ctx, spec: &Path, exec: &Path) -> Result<Report, InputError> {
    let (s, sname) = ctx.execution(spec)?;
    let (p, pname) = ctx.execution(exec)?;
    let mut r = ctx.report("admits");
    r.inputs.push(("spec", sname));
    r.inputs.push(("execution", pname));
    match admits(&s, &p)? {
        Some(emb) => {
            r.line("admits");
            for (a, b) in &emb.pairs {
                r.line(format!("  {a} -> {b}"));
            }
            r.result = json!({ "admits": true, "embedding": emb.pairs });
        }
        None => {
            r.findings = true;
            r.line("does not admit");
            r.result = json!({ "admits": false });
        }
    }
    Ok(r)
}

fn classify(ctx: &Ctx, path: &Path, event: Option<String>) -> Result<Report, InputError> {
    let (p, name) = ctx.execution(path)?;
    let mut r = ctx.report("classify");
    r.inputs.push(("execution", name));
    if let Some(e) = event {
        match classify_avoidance(&p, &EventId::new(&e), &ctx.sys) {
            Ok(v) => {
                r.findings = v.witnesses.is_empty();
                r.line(format!("{}: avoidance of {}", v.event, v.target));
                for w in &v.witnesses {
                    r.line(format!("  {w}"));
                }
                if v.witnesses.is_empty() {
                    r.line("  no recent or deep witness");
                }
                r.result = json!(v);
            }
            Err(err) => {
                r.findings = true;
                r.line(format!("not classified: {err}"));
                r.result = json!({ "error": err.to_string() });
            }
        }
        return Ok(r);
    }
    let report = check_recent_or_deep(&p, &ctx.sys)?;
    r.findings = !report.holds();
    if !report.detected.is_empty() {
        r.line(format!("corruption detected at {}", join(&report.detected)));
    }
    for v in &report.verdicts {
        let mut classes: Vec<String> = v.witnesses.iter().map(|w| w.class().to_string()).collect();
        classes.sort();
        classes.dedup();
        r.line(format!(
            "{}: avoidance of {} [{}]",
            v.event,
            v.target,
            join(&classes)
        ));
        for w in &v.witnesses {
            r.line(format!("  {w}"));
        }
    }
    if !report.outside_hypotheses.is_empty() {
        r.line(format!(
            "outside hypotheses: {}",
            join(&report.outside_hypotheses)
        ));
    }
    if !report.missing.is_empty() {
        r.line(format!("no witness: {}", join(&report.missing)));
    }
    if report.detected.is_empty()
        && report.verdicts.is_empty()
        && report.outside_hypotheses.is_empty()
    {
        r.line("no avoidance");
    }
    r.result = json!(report);
    Ok(r)
}

fn bundle_extract(ctx: &Ctx, path: &Path) -> Result<Report, InputError> {
    let (b, name) = ctx.bundle(path)?;
    let mut r = ctx.report("bundle-extract");
    r.inputs.push(("bundle", name));
    let x = match extract_specification(&ctx.sys, &b) {
        Ok(x) => x,
        Err(e) => {
            r.findings = true;
            r.line(format!("rejected: {e}"));
            r.result = json!({ "error": e.to_string() });
            return Ok(r);
        }
    };
    let bottom_up = measures_bottom_up(&x.spec, &ctx.sys);
    r.findings = !bottom_up || x.indicates_corruption;
    for e in x.spec.events() {
        r.line(format!("{}: {}", e.id, e.label));
    }
    for (a, b) in x.spec.cover_edges() {
        r.line(format!("{} < {}", x.spec.id(a), x.spec.id(b)));
    }
    for d in &x.duplicates {
        r.line(format!("merged {} into {}", d.merged, d.kept));
    }
    for n in &x.notes {
        r.line(format!("note: {n}"));
    }
    r.line(format!("measures bottom-up: {bottom_up}"));
    if x.indicates_corruption {
        r.line("bundle indicates corruption");
    }
    r.result = json!({
        "spec": execution_document(&x.spec, None),
        "origin": x.origin,
        "duplicates": x.duplicates,
        "notes": x.notes,
        "measures_bottom_up": bottom_up,
        "indicates_corruption": x.indicates_corruption,
    });
    Ok(r)
}

fn bundle_check(ctx: &Ctx, path: &Path, exec: Option<&Path>) -> Result<Report, InputError> {
    let (b, name) = ctx.bundle(path)?;
    let mut r = ctx.report("bundle-check");
    r.inputs.push(("bundle", name));
    let x = match extract_specification(&ctx.sys, &b) {
        Ok(x) => x,
        Err(e) => {
            r.findings = true;
            r.line(format!("does not comply: {e}"));
            r.result = json!({ "complies": false, "error": e.to_string() });
            return Ok(r);
        }
    };
    let complies = measures_bottom_up(&x.spec, &ctx.sys);
    r.findings = !complies;
    r.line(format!("complies with the bundling strategy: {complies}"));
    let mut result = json!({ "complies": complies });
    if let Some(path) = exec {
        let (p, pname) = ctx.execution(path)?;
        r.inputs.push(("execution", pname));
        let sub = extension_substructure(&p, &b, &ctx.sys)?;
        let layered = extends_bottom_up(&p, &sub, &ctx.sys);
        let verdicts = check_rd_bundle(&p, &sub, &ctx.sys)?;
        let ids: Vec<&EventId> = sub.iter().collect();
        r.line(format!("extension substructure: {}", join(&ids)));
        r.line(format!("extends bottom-up: {layered}"));
        for v in &verdicts {
            let line = match v {
                ExtendVerdict::Reflects {
                    extend,
                    measurement,
                } => format!("{extend}: reflects {measurement}"),
                ExtendVerdict::Deep { extend, witness }
                | ExtendVerdict::Recent { extend, witness } => {
                    format!("{extend}: {witness}")
                }
                ExtendVerdict::Unclassified { extend } => {
                    r.findings = true;
                    format!("{extend}: unclassified")
                }
            };
            r.line(line);
        }
        result["substructure"] = json!(sub);
        result["extends_bottom_up"] = json!(layered);
        result["extends"] = json!(verdicts);
    }
    r.result = result;
    Ok(r)
}

fn assumptions(ctx: &Ctx, path: &Path) -> Result<Report, InputError> {
    let (p, name) = ctx.execution(path)?;
    let mut r = ctx.report("assumptions");
    r.inputs.push(("execution", name));
    let prior = check_assumption_prior_meas(&p, &ctx.sys)?;
    let fresh = check_assumption_fresh_meas(&p, &ctx.sys)?;
    r.findings = !prior.is_empty() || !fresh.is_empty();
    for v in prior.iter().chain(&fresh) {
        r.line(v.to_string());
    }
    if !r.findings {
        r.line("both assumptions hold");
    }
    r.result = json!({ "prior_meas": prior, "fresh_meas": fresh });
    Ok(r)
}

fn relax_of(flags: &[RelaxFlag]) -> Relax {
    Relax {
        prior_meas: flags.contains(&RelaxFlag::PriorMeas),
        fresh_meas: flags.contains(&RelaxFlag::FreshMeas),
        bottom_up: flags.contains(&RelaxFlag::BottomUp),
    }
}

fn joint(
    ctx: &Ctx,
    exec: &Path,
    bundle: &Path,
    reference: Option<&Path>,
    keep_att_start: bool,
    relax: &[RelaxFlag],
) -> Result<Report, InputError> {
    let (p, pname) = ctx.execution(exec)?;
    let (b, bname) = ctx.bundle(bundle)?;
    let mut r = ctx.report("joint");
    r.inputs.push(("execution", pname));
    r.inputs.push(("bundle", bname));
    let reference = match reference {
        Some(path) => {
            let (s, sname) = ctx.execution(path)?;
            r.inputs.push(("reference", sname));
            Some(s)
        }
        None => None,
    };
    let relax = relax_of(relax);
    let opts = JointOptions {
        prior_meas: !relax.prior_meas,
        fresh_meas: !relax.fresh_meas,
        bottom_up: !relax.bottom_up,
        keep_att_start,
    };
    let v = check_joint_strategy_with(&ctx.sys, &p, &b, reference.as_ref(), opts)?;
    r.findings = !v.is_classified();
    r.line(format!("verdict: {}", v.name()));
    match &v {
        layercheck_core::bundling::JointVerdict::AssumptionsViolated { violations } => {
            for x in violations {
                r.line(format!("  {x}"));
            }
        }
        layercheck_core::bundling::JointVerdict::Deep { witness }
        | layercheck_core::bundling::JointVerdict::Recent { witness } => {
            r.line(format!("  {witness}"))
        }
        layercheck_core::bundling::JointVerdict::AdmitsCore { embedding } => {
            for (a, b) in &embedding.pairs {
                r.line(format!("  {a} -> {b}"));
            }
        }
        layercheck_core::bundling::JointVerdict::NotProduced { quote } => {
            r.line(format!("  {quote}"))
        }
        _ => {}
    }
    r.result = json!(v);
    Ok(r)
}

fn explore(
    ctx: &Ctx,
    base: &Path,
    bundle: Option<&Path>,
    reference: Option<&Path>,
    budget: ExplorationBudget,
    relax: &[RelaxFlag],
) -> Result<Report, InputError> {
    let (p, pname) = ctx.execution(base)?;
    let mut r = ctx.report("explore");
    r.inputs.push(("base", pname));
    let relax = relax_of(relax);
    let report = match bundle {
        Some(path) => {
            let (b, bname) = ctx.bundle(path)?;
            r.inputs.push(("bundle", bname));
            let reference = match reference {
                Some(path) => {
                    let (s, sname) = ctx.execution(path)?;
                    r.inputs.push(("reference", sname));
                    Some(s)
                }
                None => None,
            };
            let setup = JointSetup {
                bundle: b,
                reference,
            };
            verify_joint_strategy(&ctx.sys, &p, &setup, &budget, relax)?
        }
        None => verify_recent_or_deep_relaxed(&ctx.sys, &p, &budget, relax)?,
    };
    r.findings = !report.holds();
    explore_text(&mut r, &report);
    r.result = json!({ "budget": budget, "relax": relax, "report": report });
    Ok(r)
}

fn explore_text(r: &mut Report, t: &TheoremReport) {
    r.line(format!("theorem: {}", t.theorem));
    r.line(format!(
        "base: {} events, {} linear extensions; adversary labels: {}",
        t.base_events,
        t.base_linearizations,
        t.adversary_labels.join(" ")
    ));
    r.line(format!(
        "executions: {} generated, {} skipped as invalid (at most {} adversary events)",
        t.generated, t.skipped_invalid, t.max_adversary_events
    ));
    for (k, v) in &t.outcomes {
        r.line(format!("  {k}: {v}"));
    }
    for (target, classes) in &t.witness_classes {
        let cs: Vec<String> = classes.iter().map(|(c, n)| format!("{c} ({n})")).collect();
        r.line(format!("witness classes for {target}: {}", cs.join(", ")));
    }
    for (target, pats) in &t.patterns {
        let ps: Vec<String> = pats.iter().map(|(c, n)| format!("{c} ({n})")).collect();
        r.line(format!("patterns for {target}: {}", ps.join(", ")));
    }
    r.line(format!("failures: {}", t.failures));
    if let Some(s) = &t.first_failure {
        r.line(format!(
            "first counterexample (#{}, {}):",
            s.index, s.verdict
        ));
        for e in &s.events {
            r.line(format!("  {}: {}", e.id, e.label));
        }
    }
}

fn export_dot(ctx: &Ctx, exec: Option<&Path>, plain: bool) -> Result<Report, InputError> {
    let mut r = ctx.report("export-dot");
    let dot = match exec {
        None => system_dot(&ctx.sys, &ctx.name),
        Some(path) => {
            let (p, name) = ctx.execution(path)?;
            let ann = if plain {
                DotAnnotations::default()
            } else {
                annotations_for(&p, &ctx.sys)
            };
            r.inputs.push(("execution", name.clone()));
            poset_dot(&p, &ann, &name)
        }
    };
    r.result = Value::String(dot.clone());
    r.text = dot;
    r.bare = true;
    Ok(r)
}
