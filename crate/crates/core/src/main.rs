use direct_pf::cli;

fn main() {
    let env_seed = std::env::var(cli::SEED_ENV).ok();
    let code = cli::run(
        std::env::args_os(),
        env_seed.as_deref(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code);
}
