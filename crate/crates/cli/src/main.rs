fn main() {
    std::process::exit(lowrank_markov_cli::run(std::env::args_os()));
}
